//! Contribution of each extracted source to each observation, by least-squares
//! regression of the zero-padded observation onto shifted copies of the source.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{BssError, Result};
use crate::signal::MultichannelSignal;

/// Singular values below this fraction of the largest are discarded.
pub const RELATIVE_CUTOFF: f64 = 1e-10;

/// `(2L + N) × (2L + 1)` matrix whose column `c` holds `y` at rows `c..c + N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    data: DMatrix<f64>,
    half_window: usize,
    len: usize,
}

impl ShiftMatrix {
    pub fn new(y: &[f64], half_window: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(BssError::InsufficientData("cannot shift an empty signal".into()));
        }
        let len = y.len();
        let width = 2 * half_window + 1;
        let mut data = DMatrix::zeros(len + 2 * half_window, width);
        for c in 0..width {
            data.view_mut((c, c), (len, 1)).copy_from_slice(y);
        }
        Ok(Self { data, half_window, len })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }

    /// Length `N` of the shifted signal.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A shift matrix with its decomposition, reusable across regression targets.
pub struct ShiftRegressor {
    shift: ShiftMatrix,
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    cutoff: f64,
}

impl ShiftRegressor {
    pub fn new(shift: ShiftMatrix) -> Result<Self> {
        let svd = SVD::try_new(shift.data.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| BssError::Numeric("SVD of the shift matrix did not converge".into()))?;
        let cutoff = RELATIVE_CUTOFF * svd.singular_values.max();
        Ok(Self { shift, svd, cutoff })
    }

    pub fn shift(&self) -> &ShiftMatrix {
        &self.shift
    }

    /// Regression coefficients `β` and the fitted padded signal `Tβ`.
    pub fn fit(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let padded = self.pad(x)?;
        let beta = self.solve(&padded)?;
        let fitted = &self.shift.data * &beta;
        Ok((beta, fitted))
    }

    /// `(ŝ, relative residual)` for one observation channel.
    pub fn regress(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let padded = self.pad(x)?;
        let beta = self.solve(&padded)?;
        let fitted = &self.shift.data * &beta;
        let total = padded.norm();
        let residual = if total == 0.0 { 0.0 } else { (&fitted - &padded).norm() / total };
        let l = self.shift.half_window;
        Ok((fitted.rows(l, self.shift.len).iter().copied().collect(), residual))
    }

    fn pad(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.shift.len {
            return Err(BssError::Dimension(format!(
                "observation of length {} against extracted signal of length {}",
                x.len(),
                self.shift.len
            )));
        }
        let mut padded = DVector::zeros(x.len() + 2 * self.shift.half_window);
        padded.rows_mut(self.shift.half_window, x.len()).copy_from_slice(x);
        Ok(padded)
    }

    fn solve(&self, target: &DVector<f64>) -> Result<DVector<f64>> {
        if self.cutoff == 0.0 {
            return Ok(DVector::zeros(self.shift.data.ncols()));
        }
        self.svd
            .solve(target, self.cutoff)
            .map_err(|e| BssError::Numeric(format!("pseudo-inverse solve failed: {e}")))
    }
}

/// Single-target convenience over [`ShiftRegressor`].
pub fn regress_contribution(shift: &ShiftMatrix, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    ShiftRegressor::new(shift.clone())?.regress(x)
}

/// Contributions `ŝ_ij` of every source `i` to every observation channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionSet {
    /// One `n × N` matrix per source.
    images: Vec<DMatrix<f64>>,
    /// `m × n` relative residuals.
    residuals: DMatrix<f64>,
}

impl ContributionSet {
    pub fn sources(&self) -> usize {
        self.images.len()
    }

    pub fn channels(&self) -> usize {
        self.residuals.ncols()
    }

    pub fn len(&self) -> usize {
        self.images.first().map_or(0, |m| m.ncols())
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn contribution(&self, source: usize, channel: usize) -> Vec<f64> {
        self.images[source].row(channel).iter().copied().collect()
    }

    /// Every channel's contribution from one source.
    pub fn image(&self, source: usize) -> Result<MultichannelSignal> {
        MultichannelSignal::new(self.images[source].clone())
    }

    pub fn residual(&self, source: usize, channel: usize) -> f64 {
        self.residuals[(source, channel)]
    }

    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    /// `Σ_i ŝ_ij` for every channel.
    pub fn sum(&self) -> Option<DMatrix<f64>> {
        let mut iter = self.images.iter();
        let first = iter.next()?.clone();
        Some(iter.fold(first, |acc, m| acc + m))
    }
}

pub fn reconstruct_all(
    outputs: &MultichannelSignal,
    observations: &MultichannelSignal,
    half_window: usize,
) -> Result<ContributionSet> {
    if outputs.len() != observations.len() {
        return Err(BssError::Dimension(format!(
            "outputs of length {} against observations of length {}",
            outputs.len(),
            observations.len()
        )));
    }
    let channels = observations.channels();
    let targets = observations.to_rows();
    let per_source: Vec<(DMatrix<f64>, Vec<f64>)> = (0..outputs.channels())
        .into_par_iter()
        .map(|i| {
            let regressor = ShiftRegressor::new(ShiftMatrix::new(&outputs.channel(i), half_window)?)?;
            let mut image = DMatrix::zeros(channels, observations.len());
            let mut residuals = Vec::with_capacity(channels);
            for (j, x) in targets.iter().enumerate() {
                let (s_hat, residual) = regressor.regress(x)?;
                image.row_mut(j).copy_from_slice(&s_hat);
                residuals.push(residual);
            }
            Ok((image, residuals))
        })
        .collect::<Result<_>>()?;
    let mut residuals = DMatrix::zeros(per_source.len(), channels);
    let mut images = Vec::with_capacity(per_source.len());
    for (i, (image, row)) in per_source.into_iter().enumerate() {
        for (j, r) in row.into_iter().enumerate() {
            residuals[(i, j)] = r;
        }
        images.push(image);
    }
    Ok(ContributionSet { images, residuals })
}

/// `‖Σ_i ŝ_ij − x_j‖ / ‖x_j‖` per channel; zero observations count as 0.
pub fn reconstruction_error(set: &ContributionSet, observations: &MultichannelSignal) -> Result<Vec<f64>> {
    let sum = set
        .sum()
        .ok_or_else(|| BssError::InsufficientData("no contributions to sum".into()))?;
    if sum.shape() != observations.samples().shape() {
        return Err(BssError::Dimension(format!(
            "contributions {:?} against observations {:?}",
            sum.shape(),
            observations.samples().shape()
        )));
    }
    Ok((0..sum.nrows())
        .map(|j| {
            let x = observations.samples().row(j);
            let total = x.norm();
            if total == 0.0 {
                0.0
            } else {
                (sum.row(j) - x).norm() / total
            }
        })
        .collect())
}
