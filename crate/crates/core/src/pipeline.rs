//! Embed, whiten, correlate, separate, in one call.

use crate::error::{BssError, Result};
use crate::separation::{extract_outputs, run, SeparationConfig, SeparationModel};
use crate::signal::{delay_embed, MultichannelSignal, StackedSignal};
use crate::whitening::{apply_whitener, compute_lagged_correlations, fit_whitener, LaggedCorrelationSet, WhiteningModel};

#[derive(Debug, Clone)]
pub struct Separation {
    pub whitener: WhiteningModel,
    pub whitened: StackedSignal,
    pub correlations: LaggedCorrelationSet,
    pub model: SeparationModel,
    /// `m` channels of `N − Q + 1` samples; sample `c` belongs to input
    /// sample `c + Q − 1`.
    pub outputs: MultichannelSignal,
}

/// Input sample index of the first output sample.
pub fn frame_offset(config: &SeparationConfig) -> usize {
    config.embed_order - 1
}

/// Crops a full-length signal to the samples covered by the outputs.
pub fn align_to_outputs(signal: &MultichannelSignal, config: &SeparationConfig) -> Result<MultichannelSignal> {
    let offset = frame_offset(config);
    if signal.len() <= offset {
        return Err(BssError::InsufficientData(format!(
            "signal of length {} is shorter than the embedding order {}",
            signal.len(),
            config.embed_order
        )));
    }
    signal.crop(offset, signal.len() - offset)
}

pub fn separate(observations: &MultichannelSignal, config: &SeparationConfig, count: usize) -> Result<Separation> {
    config.validate()?;
    let stacked = delay_embed(observations, config.embed_order)?;
    let whitener = fit_whitener(&stacked, config.eigenvalue_floor)?;
    let whitened = apply_whitener(&whitener, &stacked)?;
    let correlations = compute_lagged_correlations(&whitened, config.lags())?;
    let model = run(&whitened, &correlations, config, count)?;
    let outputs = extract_outputs(&model, &whitened)?.with_sample_rate(observations.sample_rate());
    Ok(Separation { whitener, whitened, correlations, model, outputs })
}
