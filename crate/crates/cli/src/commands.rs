use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convbss::evaluation::{MatchReport, SIR_CAP_DB};
use convbss::reconstruction::reconstruction_error;
use convbss::separation::{constraint_residual, RowReport};
use convbss::{
    align_to_outputs, diagonalization_error, frame_offset, match_sources, reconstruct_all, separate, simulate,
    MimoFirFilter, MultichannelSignal, SeparationConfig, SimulationSpec,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{matrix_rows, read_signal, read_signals, signal_path, write_json, write_signal};

pub const SCHEMA_VERSION: u32 = 1;

/// Raised after all outputs are written when some row hit `max_iter`.
#[derive(Debug)]
pub struct Unconverged {
    pub rows: Vec<usize>,
}

impl std::fmt::Display for Unconverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rows {:?} did not converge within max_iter; outputs were written anyway", self.rows)
    }
}

impl std::error::Error for Unconverged {}

fn prepare_out(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MixingFile {
    pub mixing: MimoFirFilter,
    pub coloring: Vec<Vec<f64>>,
    pub simulation: SimulationSpec,
}

pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let spec = &config.simulation;
    if config.guard_underdetermined && spec.sources() > spec.channels {
        eprintln!(
            "warning: {} sources but only {} channels; the mixture is underdetermined",
            spec.sources(),
            spec.channels
        );
    }
    let sim = simulate(spec)?;
    let dir = prepare_out(config)?;
    let f = config.format;
    write_signal(&signal_path(&dir, "innovations", f), &sim.innovations, f)?;
    write_signal(&signal_path(&dir, "sources", f), &sim.sources, f)?;
    write_signal(&signal_path(&dir, "observations", f), &sim.observations, f)?;
    // Channel j·n + i is source j as heard at observation i.
    let image_rows: Vec<Vec<f64>> = sim.images.iter().flat_map(|s| s.to_rows()).collect();
    write_signal(&signal_path(&dir, "source_images", f), &MultichannelSignal::from_rows(&image_rows)?, f)?;
    write_json(
        &dir.join("mixing.json"),
        &MixingFile { mixing: sim.mixing, coloring: sim.coloring, simulation: spec.clone() },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UnmixingFile {
    /// `m × nQ`, row-major.
    pub rows: Vec<Vec<f64>>,
    pub embed_order: usize,
    pub channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WhiteningFile {
    pub mean: Vec<f64>,
    pub transform: Vec<Vec<f64>>,
    pub clamped_eigenvalues: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeparationReport {
    pub schema_version: u32,
    pub mode: String,
    pub sources: usize,
    pub channels: usize,
    pub samples: usize,
    /// Input sample index of output sample 0.
    pub frame_offset: usize,
    pub converged: bool,
    pub constraint_residual: f64,
    pub rows: Vec<RowReport>,
    pub config: SeparationConfig,
}

pub fn load_observations(config: &RunConfig) -> Result<MultichannelSignal> {
    if config.inputs.is_empty() {
        bail!("no observation files given (use --input)");
    }
    let all = read_signals(&config.inputs)?;
    match &config.channels {
        Some(channels) => Ok(all.select(channels)?),
        None => Ok(all),
    }
}

pub fn cmd_separate(config: &RunConfig) -> Result<()> {
    let observations = load_observations(config)?;
    let count = config.sources.unwrap_or(observations.channels());
    if config.guard_underdetermined && count > observations.channels() {
        eprintln!(
            "warning: extracting {count} sources from {} channels",
            observations.channels()
        );
    }
    let sep = &config.separation;
    let result = separate(&observations, sep, count)?;
    let dir = prepare_out(config)?;
    write_signal(&signal_path(&dir, "outputs", config.format), &result.outputs, config.format)?;
    write_json(
        &dir.join("unmixing.json"),
        &UnmixingFile {
            rows: matrix_rows(result.model.unmixing()),
            embed_order: sep.embed_order,
            channels: observations.channels(),
        },
    )?;
    write_json(
        &dir.join("whitening.json"),
        &WhiteningFile {
            mean: result.whitener.mean().iter().copied().collect(),
            transform: matrix_rows(result.whitener.transform()),
            clamped_eigenvalues: result.whitener.clamped(),
        },
    )?;
    let report = SeparationReport {
        schema_version: SCHEMA_VERSION,
        mode: sep.mode.to_string(),
        sources: count,
        channels: observations.channels(),
        samples: result.outputs.len(),
        frame_offset: frame_offset(sep),
        converged: result.model.converged(),
        constraint_residual: constraint_residual(result.model.unmixing(), &result.correlations)?,
        rows: result.model.reports().to_vec(),
        config: sep.clone(),
    };
    write_json(&dir.join("report.json"), &report)?;
    let unconverged: Vec<usize> =
        report.rows.iter().enumerate().filter(|(_, r)| !r.converged).map(|(i, _)| i).collect();
    if !unconverged.is_empty() {
        return Err(Unconverged { rows: unconverged }.into());
    }
    Ok(())
}

/// Uses `signal` as is when it already matches `len`, crops it when it is
/// the full-length input of a separation with this embedding order.
fn match_length(signal: MultichannelSignal, len: usize, sep: &SeparationConfig, what: &str) -> Result<MultichannelSignal> {
    if signal.len() == len {
        return Ok(signal);
    }
    if signal.len() == len + frame_offset(sep) {
        return Ok(align_to_outputs(&signal, sep)?);
    }
    Err(convbss::BssError::Dimension(format!(
        "{what} have {} samples; expected {len} or {} (outputs plus Q - 1 with Q = {})",
        signal.len(),
        len + frame_offset(sep),
        sep.embed_order
    ))
    .into())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResidualRow {
    pub source: usize,
    pub channel: usize,
    pub residual: f64,
}

pub fn cmd_reconstruct(config: &RunConfig, outputs: &Path, observations: &[PathBuf]) -> Result<()> {
    let sep = &config.separation;
    let y = read_signal(outputs)?;
    let x = match_length(read_signals(observations)?, y.len(), sep, "observations")?;
    let lags = sep.lags();
    let set = reconstruct_all(&y, &x, lags)?;
    let dir = prepare_out(config)?;
    for i in 0..set.sources() {
        let image = set.image(i)?.with_sample_rate(x.sample_rate());
        write_signal(&signal_path(&dir, &format!("contribution_s{i}"), config.format), &image, config.format)?;
    }
    let mut writer = csv::Writer::from_path(dir.join("residuals.csv"))?;
    for i in 0..set.sources() {
        for j in 0..set.channels() {
            writer.serialize(ResidualRow { source: i, channel: j, residual: set.residual(i, j) })?;
        }
    }
    writer.flush()?;
    let errors = reconstruction_error(&set, &x)?;
    let mut writer = csv::Writer::from_path(dir.join("reconstruction_error.csv"))?;
    writer.write_record(["channel", "relative_error"])?;
    for (j, e) in errors.iter().enumerate() {
        writer.write_record([j.to_string(), e.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub max_lag: usize,
    pub lag_window: usize,
    pub sir_cap_db: f64,
    #[serde(flatten)]
    pub matching: MatchReport,
    pub min_correlation: f64,
    pub diagonalization_error: Option<f64>,
}

/// Writes matched output `i` shifted by its lag and sign-corrected next to
/// its truth, one CSV per pair, for external plotting.
fn write_series(dir: &Path, outputs: &MultichannelSignal, truths: &MultichannelSignal, report: &MatchReport) -> Result<()> {
    for m in &report.per_source {
        let y = outputs.channel(m.output);
        let s = truths.channel(m.truth);
        let mut writer = csv::Writer::from_path(dir.join(format!("series_output{}_truth{}.csv", m.output, m.truth)))?;
        writer.write_record(["sample", "truth", "output_aligned"])?;
        for (k, t) in s.iter().enumerate() {
            let idx = k as isize + m.lag;
            let v = if (0..y.len() as isize).contains(&idx) { m.sign * y[idx as usize] } else { f64::NAN };
            writer.write_record([k.to_string(), t.to_string(), v.to_string()])?;
        }
        writer.flush()?;
    }
    Ok(())
}

pub fn evaluate_signals(
    outputs: &MultichannelSignal,
    truths: &MultichannelSignal,
    sep: &SeparationConfig,
    max_lag: Option<usize>,
) -> Result<EvaluationReport> {
    let lag_window = sep.lags();
    let max_lag = max_lag.unwrap_or(lag_window);
    let matching = match_sources(outputs, truths, max_lag)?;
    let diagonalization_error =
        if outputs.channels() >= 2 { Some(diagonalization_error(outputs, lag_window)?) } else { None };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        max_lag,
        lag_window,
        sir_cap_db: SIR_CAP_DB,
        min_correlation: matching.min_correlation(),
        matching,
        diagonalization_error,
    })
}

pub fn cmd_evaluate(config: &RunConfig, outputs: &Path, truths: &Path, max_lag: Option<usize>) -> Result<()> {
    let sep = &config.separation;
    let y = read_signal(outputs)?;
    let s = match_length(read_signal(truths)?, y.len(), sep, "truths")?;
    let report = evaluate_signals(&y, &s, sep, max_lag)?;
    let dir = prepare_out(config)?;
    write_json(&dir.join("evaluation.json"), &report)?;
    write_series(&dir, &y, &s, &report.matching)
}
