//! Synthetic convolutive mixtures with known innovations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::signal::{apply_mimo_fir, generate_sources, Distribution, InnovationSpec, MimoFirFilter, MultichannelSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// One entry per source.
    pub distributions: Vec<Distribution>,
    /// Observation channels `n`.
    pub channels: usize,
    /// Samples `N`.
    pub len: usize,
    /// Length of each random coloring filter (odd); 1 gives white sources.
    pub coloring_len: usize,
    /// Mixing filter order `P`.
    pub mixing_order: usize,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            distributions: vec![Distribution::Uniform, Distribution::Laplacian],
            channels: 2,
            len: 20_000,
            coloring_len: 3,
            mixing_order: 3,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn sources(&self) -> usize {
        self.distributions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub innovations: MultichannelSignal,
    pub sources: MultichannelSignal,
    pub coloring: Vec<Vec<f64>>,
    pub mixing: MimoFirFilter,
    pub observations: MultichannelSignal,
    /// `images[j]` is source `j` alone seen through the mixing filters.
    pub images: Vec<MultichannelSignal>,
}

/// Coloring and mixing taps are iid standard normal, drawn from one stream
/// seeded by `spec.seed`; innovations use an independent stream.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    let count = spec.sources();
    if count == 0 || spec.channels == 0 {
        return Err(BssError::InvalidConfig("need at least one source and one channel".into()));
    }
    if spec.mixing_order == 0 {
        return Err(BssError::InvalidConfig("mixing_order must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coloring: Vec<Vec<f64>> = if spec.coloring_len == 1 {
        vec![vec![1.0]; count]
    } else {
        (0..count)
            .map(|_| (0..spec.coloring_len).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    };
    let mixing = MimoFirFilter::random(spec.channels, count, spec.mixing_order, &mut rng)?;
    let innovation_spec = InnovationSpec {
        distributions: spec.distributions.clone(),
        coloring: coloring.clone(),
        seed: spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
    };
    let (innovations, sources) = generate_sources(&innovation_spec, spec.len, count)?;
    let observations = apply_mimo_fir(&mixing, &sources)?;
    let images = (0..count)
        .map(|j| {
            let mut alone = sources.samples().clone();
            for (i, mut row) in alone.row_iter_mut().enumerate() {
                if i != j {
                    row.fill(0.0);
                }
            }
            apply_mimo_fir(&mixing, &MultichannelSignal::new(alone)?)
        })
        .collect::<Result<_>>()?;
    Ok(Simulation { innovations, sources, coloring, mixing, observations, images })
}
