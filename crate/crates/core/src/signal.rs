//! Signal and filter containers, the innovation-process source generator,
//! MIMO FIR convolution and delay embedding.
//!
//! Delay embedding turns an `n`-channel convolutive mixture into an
//! instantaneous one: each frame stacks the `Q` most recent samples of every
//! channel, so an order-`Q` FIR demixing system becomes a single `m × nQ`
//! matrix acting on frames.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};

/// `n` channels of `N` real samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    samples: DMatrix<f64>,
    sample_rate: Option<u32>,
}

impl MultichannelSignal {
    /// Wraps an `n × N` matrix. Requires `n ≥ 1`, `N ≥ 1` and finite values.
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(BssError::InvalidArgument("signal needs at least one channel".into()));
        }
        if samples.ncols() == 0 {
            return Err(BssError::InsufficientData("signal has no samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(BssError::Numeric("signal contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(BssError::Dimension("channels have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(n, len, |i, k| rows[i][k]))
    }

    /// A signal with no channels. Only produced when a model has zero rows.
    pub fn empty(len: usize) -> Self {
        Self { samples: DMatrix::zeros(0, len), sample_rate: None }
    }

    pub fn with_sample_rate(mut self, rate: Option<u32>) -> Self {
        self.sample_rate = rate;
        self
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.sample_rate
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> DMatrix<f64> {
        self.samples
    }

    /// Copy of channel `i`.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.samples.row(i).iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.channels()).map(|i| self.channel(i)).collect()
    }

    /// Samples `start .. start + len` of every channel.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(BssError::Dimension(format!(
                "crop {start}..{} exceeds signal length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            samples: self.samples.columns(start, len).into_owned(),
            sample_rate: self.sample_rate,
        })
    }

    /// Keeps the listed channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels()) {
            return Err(BssError::Dimension(format!(
                "channel {bad} out of range for {}-channel signal",
                self.channels()
            )));
        }
        let rows: Vec<Vec<f64>> = channels.iter().map(|&c| self.channel(c)).collect();
        Ok(Self::from_rows(&rows)?.with_sample_rate(self.sample_rate))
    }
}

#[derive(Serialize, Deserialize)]
struct FilterRepr {
    taps: Vec<Vec<Vec<f64>>>,
}

/// Bank of FIR filters `taps[out][in][lag]`, all of the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterRepr", into = "FilterRepr")]
pub struct MimoFirFilter {
    outputs: usize,
    inputs: usize,
    order: usize,
    taps: Vec<f64>,
}

impl TryFrom<FilterRepr> for MimoFirFilter {
    type Error = BssError;

    fn try_from(repr: FilterRepr) -> Result<Self> {
        Self::new(&repr.taps)
    }
}

impl From<MimoFirFilter> for FilterRepr {
    fn from(filter: MimoFirFilter) -> Self {
        FilterRepr { taps: filter.nested() }
    }
}

impl MimoFirFilter {
    pub fn new(taps: &[Vec<Vec<f64>>]) -> Result<Self> {
        let outputs = taps.len();
        let inputs = taps.first().map_or(0, Vec::len);
        let order = taps.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 || order == 0 {
            return Err(BssError::InvalidArgument("filter bank must be non-empty".into()));
        }
        let mut flat = Vec::with_capacity(outputs * inputs * order);
        for row in taps {
            if row.len() != inputs {
                return Err(BssError::Dimension("ragged filter bank".into()));
            }
            for filter in row {
                if filter.len() != order {
                    return Err(BssError::Dimension("filters must share one order".into()));
                }
                flat.extend_from_slice(filter);
            }
        }
        if flat.iter().any(|t| !t.is_finite()) {
            return Err(BssError::Numeric("filter taps must be finite".into()));
        }
        let bank = Self { outputs, inputs, order, taps: flat };
        if let Some(i) = (0..outputs).find(|&i| bank.output_row(i).iter().all(|&t| t == 0.0)) {
            return Err(BssError::InvalidArgument(format!("output {i} has only zero taps")));
        }
        Ok(bank)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let taps: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| (0..n).map(|j| vec![if i == j { 1.0 } else { 0.0 }]).collect())
            .collect();
        Self::new(&taps)
    }

    /// Diagonal bank with `filters[i]` on channel `i`.
    pub fn diagonal(filters: &[Vec<f64>]) -> Result<Self> {
        let n = filters.len();
        let order = filters.first().map_or(0, Vec::len);
        let taps: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { filters[i].clone() } else { vec![0.0; order] })
                    .collect()
            })
            .collect();
        Self::new(&taps)
    }

    /// Taps drawn iid from the standard normal distribution.
    pub fn random<R: Rng>(outputs: usize, inputs: usize, order: usize, rng: &mut R) -> Result<Self> {
        let taps: Vec<Vec<Vec<f64>>> = (0..outputs)
            .map(|_| {
                (0..inputs)
                    .map(|_| (0..order).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        Self::new(&taps)
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tap(&self, out: usize, inp: usize, lag: usize) -> f64 {
        self.taps[(out * self.inputs + inp) * self.order + lag]
    }

    /// Impulse response from input `inp` to output `out`.
    pub fn response(&self, out: usize, inp: usize) -> &[f64] {
        let start = (out * self.inputs + inp) * self.order;
        &self.taps[start..start + self.order]
    }

    fn output_row(&self, out: usize) -> &[f64] {
        let start = out * self.inputs * self.order;
        &self.taps[start..start + self.inputs * self.order]
    }

    pub fn nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.outputs)
            .map(|i| (0..self.inputs).map(|j| self.response(i, j).to_vec()).collect())
            .collect()
    }
}

/// Causal MIMO convolution with zero initial conditions; output length equals
/// input length.
pub fn apply_mimo_fir(filter: &MimoFirFilter, input: &MultichannelSignal) -> Result<MultichannelSignal> {
    if filter.inputs() != input.channels() {
        return Err(BssError::Dimension(format!(
            "filter expects {} input channels, signal has {}",
            filter.inputs(),
            input.channels()
        )));
    }
    let len = input.len();
    let rows = input.to_rows();
    let mut out = DMatrix::zeros(filter.outputs(), len);
    for i in 0..filter.outputs() {
        let mut acc = vec![0.0; len];
        for (j, x) in rows.iter().enumerate() {
            for (lag, &h) in filter.response(i, j).iter().enumerate() {
                if h == 0.0 || lag >= len {
                    continue;
                }
                for (a, &v) in acc[lag..].iter_mut().zip(x) {
                    *a += h * v;
                }
            }
        }
        for (k, v) in acc.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(MultichannelSignal::new(out)?.with_sample_rate(input.sample_rate()))
}

/// Zero-mean, unit-variance innovation distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Uniform,
    Laplacian,
    BernoulliSign,
    /// Accepted by the parser so that configurations requesting it can be
    /// rejected with a clear message; Gaussian innovations are not separable.
    Gaussian,
}

impl Distribution {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Distribution::Uniform => {
                let half = 3f64.sqrt();
                rng.random_range(-half..half)
            }
            Distribution::Laplacian => {
                let a: f64 = rng.sample(Exp1);
                let b: f64 = rng.sample(Exp1);
                (a - b) * std::f64::consts::FRAC_1_SQRT_2
            }
            Distribution::BernoulliSign => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Distribution::Gaussian => unreachable!("rejected during validation"),
        }
    }
}

/// Source model: iid innovations colored by a diagonal bank of length-`2R−1`
/// filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    pub distributions: Vec<Distribution>,
    /// `coloring[i]` holds `F_i(−R+1) … F_i(R−1)`.
    pub coloring: Vec<Vec<f64>>,
    pub seed: u64,
}

impl InnovationSpec {
    /// White sources: every coloring filter is the unit impulse.
    pub fn white(distributions: Vec<Distribution>, seed: u64) -> Self {
        let coloring = vec![vec![1.0]; distributions.len()];
        Self { distributions, coloring, seed }
    }

    /// Half-width `R` of the coloring filters.
    pub fn half_width(&self) -> usize {
        self.coloring.first().map_or(1, |f| f.len().div_ceil(2))
    }

    fn validate(&self, count: usize) -> Result<()> {
        if self.distributions.len() != count || self.coloring.len() != count {
            return Err(BssError::InvalidConfig(format!(
                "{count} sources requested but spec lists {} distributions and {} coloring filters",
                self.distributions.len(),
                self.coloring.len()
            )));
        }
        if self.distributions.contains(&Distribution::Gaussian) {
            return Err(BssError::InvalidConfig(
                "Gaussian innovations cannot be separated; choose a non-Gaussian distribution".into(),
            ));
        }
        let width = self.coloring[0].len();
        if width == 0 || width.is_multiple_of(2) {
            return Err(BssError::InvalidConfig(format!(
                "coloring filters need odd length 2R-1, got {width}"
            )));
        }
        if self.coloring.iter().any(|f| f.len() != width) {
            return Err(BssError::InvalidConfig("coloring filters must share one length".into()));
        }
        if self.coloring.iter().flatten().any(|t| !t.is_finite()) {
            return Err(BssError::InvalidConfig("coloring taps must be finite".into()));
        }
        if self.coloring.iter().any(|f| f.iter().all(|&t| t == 0.0)) {
            return Err(BssError::InvalidConfig("coloring filter is identically zero".into()));
        }
        Ok(())
    }
}

/// Draws `count` innovation sequences of length `len` and colors them.
///
/// The non-causal coloring filter is applied causally, so sources lag the
/// centered model by `R − 1` samples. Deterministic in `spec.seed`.
pub fn generate_sources(
    spec: &InnovationSpec,
    len: usize,
    count: usize,
) -> Result<(MultichannelSignal, MultichannelSignal)> {
    spec.validate(count)?;
    let width = spec.coloring[0].len();
    if len <= width {
        return Err(BssError::InsufficientData(format!(
            "length {len} must exceed coloring filter length {width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut innovations = DMatrix::zeros(count, len);
    for (i, dist) in spec.distributions.iter().enumerate() {
        for k in 0..len {
            innovations[(i, k)] = dist.draw(&mut rng);
        }
    }
    let innovations = MultichannelSignal::new(innovations)?;
    let coloring = MimoFirFilter::diagonal(&spec.coloring)?;
    let sources = apply_mimo_fir(&coloring, &innovations)?;
    Ok((innovations, sources))
}

/// Delay-embedded frames: `nQ × M` with `M = N − Q + 1`.
///
/// Row `i·Q + d`, column `c` holds channel `i` at sample `c + Q − 1 − d`, so
/// each channel block lists its `Q` samples newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSignal {
    data: DMatrix<f64>,
    channels: usize,
    order: usize,
}

impl StackedSignal {
    pub fn from_matrix(data: DMatrix<f64>, channels: usize, order: usize) -> Result<Self> {
        if channels * order != data.nrows() {
            return Err(BssError::Dimension(format!(
                "{} rows cannot hold {channels} channels of order {order}",
                data.nrows()
            )));
        }
        Ok(Self { data, channels, order })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Frame dimension `nQ`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of frames `M`.
    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// Stacks `order` consecutive delays of every channel. Only fully populated
/// frames are emitted.
pub fn delay_embed(input: &MultichannelSignal, order: usize) -> Result<StackedSignal> {
    if order == 0 {
        return Err(BssError::InvalidArgument("embedding order must be at least 1".into()));
    }
    let len = input.len();
    if len < order {
        return Err(BssError::InsufficientData(format!(
            "signal of length {len} is shorter than embedding order {order}"
        )));
    }
    let frames = len - order + 1;
    let x = input.samples();
    let data = DMatrix::from_fn(input.channels() * order, frames, |row, col| {
        let (i, d) = (row / order, row % order);
        x[(i, col + order - 1 - d)]
    });
    StackedSignal::from_matrix(data, input.channels(), order)
}
