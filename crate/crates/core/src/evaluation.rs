//! Separation quality against known sources: lag-matched correlation, greedy
//! matching with SIR, and the block-diagonal residual of output correlations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::signal::MultichannelSignal;

/// SIR reported for a perfect (or perfectly orthogonal) match, in dB.
pub const SIR_CAP_DB: f64 = 99.0;

/// Best alignment between two sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    /// Positive when `b` lags behind `a`: `b(k + lag)` pairs with `a(k)`.
    pub lag: isize,
    /// Signed normalized correlation at `lag`.
    pub correlation: f64,
}

impl LagCorrelation {
    pub fn value(&self) -> f64 {
        self.correlation.abs()
    }
}

fn has_variance(x: &[f64]) -> bool {
    x.iter().any(|&v| v != x[0])
}

fn segment_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Maximizes `|corr(a(k), b(k + l))|` over `|l| ≤ max_lag` using mean-removed
/// overlapping segments. Ties go to the smaller `|l|`, then to the negative lag.
pub fn max_lag_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<LagCorrelation> {
    if a.len() != b.len() {
        return Err(BssError::Dimension(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < max_lag + 2 {
        return Err(BssError::InsufficientData(format!(
            "length {} cannot support lags up to {max_lag}",
            a.len()
        )));
    }
    if !has_variance(a) || !has_variance(b) {
        return Err(BssError::UndefinedCorrelation("zero-variance input".into()));
    }
    let n = a.len();
    let mut best = LagCorrelation { lag: 0, correlation: segment_correlation(a, b) };
    for step in 1..=max_lag {
        for lag in [-(step as isize), step as isize] {
            let c = if lag > 0 {
                let s = lag as usize;
                segment_correlation(&a[..n - s], &b[s..])
            } else {
                let s = (-lag) as usize;
                segment_correlation(&a[s..], &b[..n - s])
            };
            if c.abs() > best.value() {
                best = LagCorrelation { lag, correlation: c };
            }
        }
    }
    Ok(best)
}

/// `10 log10(c² / (1 − c²))`, capped at `±SIR_CAP_DB`.
pub fn sir_db(correlation: f64) -> f64 {
    let c2 = correlation * correlation;
    let sir = 10.0 * (c2 / (1.0 - c2)).log10();
    if sir.is_nan() {
        return SIR_CAP_DB;
    }
    sir.clamp(-SIR_CAP_DB, SIR_CAP_DB)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub output: usize,
    pub truth: usize,
    pub lag: isize,
    /// Absolute normalized correlation.
    pub correlation: f64,
    /// `+1` or `−1`.
    pub sign: f64,
    pub sir_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `permutation[i]` is the truth matched to output `i`.
    pub permutation: Vec<usize>,
    /// One entry per output, in output order.
    pub per_source: Vec<SourceMatch>,
}

impl MatchReport {
    pub fn min_correlation(&self) -> f64 {
        self.per_source.iter().map(|s| s.correlation).fold(f64::INFINITY, f64::min)
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        self.permutation.iter().all(|&t| t < seen.len() && !std::mem::replace(&mut seen[t], true))
    }
}

/// Greedy assignment: repeatedly takes the strongest remaining pair.
pub fn match_sources(outputs: &MultichannelSignal, truths: &MultichannelSignal, max_lag: usize) -> Result<MatchReport> {
    let m = outputs.channels();
    if truths.channels() != m {
        return Err(BssError::Dimension(format!("{m} outputs against {} truths", truths.channels())));
    }
    let outs = outputs.to_rows();
    let refs = truths.to_rows();
    let table: Vec<LagCorrelation> = (0..m * m)
        .into_par_iter()
        .map(|k| max_lag_correlation(&refs[k % m], &outs[k / m], max_lag))
        .collect::<Result<_>>()?;

    let mut permutation = vec![usize::MAX; m];
    let mut taken = vec![false; m];
    let mut per_source: Vec<Option<SourceMatch>> = vec![None; m];
    for _ in 0..m {
        let mut pick: Option<(usize, usize)> = None;
        for i in (0..m).filter(|&i| permutation[i] == usize::MAX) {
            for t in (0..m).filter(|&t| !taken[t]) {
                let better = pick.is_none_or(|(pi, pt)| table[i * m + t].value() > table[pi * m + pt].value());
                if better {
                    pick = Some((i, t));
                }
            }
        }
        let (i, t) = pick.expect("unmatched pair remains");
        permutation[i] = t;
        taken[t] = true;
        let best = table[i * m + t];
        per_source[i] = Some(SourceMatch {
            output: i,
            truth: t,
            lag: best.lag,
            correlation: best.value(),
            sign: if best.correlation < 0.0 { -1.0 } else { 1.0 },
            sir_db: sir_db(best.value()),
        });
    }
    Ok(MatchReport { permutation, per_source: per_source.into_iter().map(Option::unwrap).collect() })
}

/// Off-diagonal share of the squared Frobenius norm of the correlation of the
/// lag-stacked outputs `[y_i(k + l)]`, `|l| ≤ L`.
pub fn diagonalization_error(outputs: &MultichannelSignal, half_window: usize) -> Result<f64> {
    let m = outputs.channels();
    if m < 2 {
        return Err(BssError::InvalidArgument(format!("need at least two outputs, got {m}")));
    }
    let width = 2 * half_window + 1;
    let len = outputs.len();
    if len < width + 1 {
        return Err(BssError::InsufficientData(format!(
            "{len} samples cannot support a lag window of ±{half_window}"
        )));
    }
    let frames = len - 2 * half_window;
    let y = outputs.samples();
    let stacked = DMatrix::from_fn(m * width, frames, |row, col| {
        let (i, l) = (row / width, row % width);
        y[(i, col + l)]
    });
    let corr = (&stacked * stacked.transpose()) / frames as f64;
    let (mut off, mut total) = (0.0, 0.0);
    for r in 0..corr.nrows() {
        for c in 0..corr.ncols() {
            let e = corr[(r, c)] * corr[(r, c)];
            total += e;
            if r / width != c / width {
                off += e;
            }
        }
    }
    if total == 0.0 {
        return Err(BssError::UndefinedCorrelation("outputs are identically zero".into()));
    }
    Ok(off / total)
}
