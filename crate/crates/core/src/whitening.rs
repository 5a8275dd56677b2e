//! Instantaneous whitening of delay-embedded frames and the lagged
//! correlation matrices of the whitened data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{BssError, Result};
use crate::signal::StackedSignal;

/// Affine map `v = H (x̄ − mean)` to unit-covariance coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
    clamped: usize,
}

impl WhiteningModel {
    pub fn from_parts(mean: DVector<f64>, transform: DMatrix<f64>) -> Result<Self> {
        if transform.nrows() != mean.len() || transform.ncols() != mean.len() {
            return Err(BssError::Dimension(format!(
                "transform {}x{} does not match mean of length {}",
                transform.nrows(),
                transform.ncols(),
                mean.len()
            )));
        }
        if transform.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(BssError::Numeric("whitening model has non-finite entries".into()));
        }
        Ok(Self { mean, transform, clamped: 0 })
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), transform: DMatrix::identity(dim, dim), clamped: 0 }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of covariance eigenvalues raised to the floor during fitting.
    pub fn clamped(&self) -> usize {
        self.clamped
    }
}

fn centered(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let frames = data.ncols() as f64;
    let mean = data.column_sum() / frames;
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (mean, centered)
}

fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (_, c) = centered(data);
    let frames = data.ncols() as f64;
    (&c * c.transpose()) / frames
}

/// Fits `H = D^{-1/2} Eᵀ` from the eigendecomposition of the sample
/// covariance. Eigenvalues below `eigenvalue_floor × λ_max` are clamped to that
/// value, so the model keeps full dimension `nQ`.
pub fn fit_whitener(stacked: &StackedSignal, eigenvalue_floor: f64) -> Result<WhiteningModel> {
    if !(eigenvalue_floor > 0.0) {
        return Err(BssError::InvalidArgument(format!(
            "eigenvalue floor must be positive, got {eigenvalue_floor}"
        )));
    }
    let (dim, frames) = (stacked.dim(), stacked.frames());
    if frames <= dim {
        return Err(BssError::InsufficientData(format!(
            "{frames} frames cannot whiten {dim} dimensions"
        )));
    }
    let (mean, c) = centered(stacked.data());
    let cov = (&c * c.transpose()) / frames as f64;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(BssError::Numeric("covariance is not finite".into()));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) || !largest.is_finite() {
        return Err(BssError::Numeric(format!("covariance has no positive eigenvalue ({largest})")));
    }
    let floor = eigenvalue_floor * largest;

    let mut clamped = 0;
    let mut transform = DMatrix::zeros(dim, dim);
    for (row, &k) in order.iter().enumerate() {
        let mut lambda = eig.eigenvalues[k];
        if lambda < floor {
            lambda = floor;
            clamped += 1;
        }
        let v = eig.eigenvectors.column(k);
        // Sign convention: the largest-magnitude component is positive.
        let pivot = v.iter().copied().fold(0.0f64, |p, x| if x.abs() > p.abs() { x } else { p });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / lambda.sqrt();
        for col in 0..dim {
            transform[(row, col)] = v[col] * scale;
        }
    }
    if transform.iter().any(|v| !v.is_finite()) {
        return Err(BssError::Numeric("whitening transform is not finite".into()));
    }
    Ok(WhiteningModel { mean, transform, clamped })
}

pub fn apply_whitener(model: &WhiteningModel, stacked: &StackedSignal) -> Result<StackedSignal> {
    if model.dim() != stacked.dim() {
        return Err(BssError::Dimension(format!(
            "model of dimension {} applied to frames of dimension {}",
            model.dim(),
            stacked.dim()
        )));
    }
    if stacked.frames() == 0 {
        return Err(BssError::InsufficientData("no frames to whiten".into()));
    }
    let mut x = stacked.data().clone();
    for mut col in x.column_iter_mut() {
        col -= &model.mean;
    }
    StackedSignal::from_matrix(&model.transform * x, stacked.channels(), stacked.order())
}

/// Sample correlations `R_v(l) = E{v(k) v(k−l)ᵀ}` for `l = −L..L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedCorrelationSet {
    lags: usize,
    matrices: Vec<DMatrix<f64>>,
}

impl LaggedCorrelationSet {
    /// Half-width `L` of the lag window.
    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `R_v(lag)`; panics when `|lag| > L`.
    pub fn get(&self, lag: isize) -> &DMatrix<f64> {
        let idx = lag + self.lags as isize;
        assert!(
            idx >= 0 && (idx as usize) < self.matrices.len(),
            "lag {lag} outside window ±{}",
            self.lags
        );
        &self.matrices[idx as usize]
    }

    /// Lags in ascending order with their matrices.
    pub fn iter(&self) -> impl Iterator<Item = (isize, &DMatrix<f64>)> {
        let l = self.lags as isize;
        (-l..=l).zip(self.matrices.iter())
    }
}

/// Truncated-overlap estimator with divisor `M − l`; negative lags are the
/// transposes of the positive ones.
pub fn compute_lagged_correlations(whitened: &StackedSignal, lags: usize) -> Result<LaggedCorrelationSet> {
    let frames = whitened.frames();
    if frames <= lags + 1 {
        return Err(BssError::InsufficientData(format!(
            "{frames} frames cannot support a lag window of ±{lags}"
        )));
    }
    let v = whitened.data();
    let positive: Vec<DMatrix<f64>> = (0..=lags)
        .into_par_iter()
        .map(|l| {
            let overlap = frames - l;
            let lead = v.columns(l, overlap);
            let lagged = v.columns(0, overlap);
            (lead * lagged.transpose()) / overlap as f64
        })
        .collect();
    let mut matrices = Vec::with_capacity(2 * lags + 1);
    matrices.extend(positive[1..].iter().rev().map(|m| m.transpose()));
    matrices.extend(positive);
    Ok(LaggedCorrelationSet { lags, matrices })
}

/// Largest absolute deviation of the sample covariance from the identity.
pub fn whiteness_error(whitened: &StackedSignal) -> f64 {
    if whitened.frames() == 0 {
        return f64::INFINITY;
    }
    let cov = sample_covariance(whitened.data());
    let dim = cov.nrows();
    (cov - DMatrix::<f64>::identity(dim, dim)).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{delay_embed, MultichannelSignal};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn stacked(data: DMatrix<f64>) -> StackedSignal {
        let dim = data.nrows();
        StackedSignal::from_matrix(data, dim, 1).unwrap()
    }

    fn whiten(s: &StackedSignal) -> StackedSignal {
        apply_whitener(&fit_whitener(s, 1e-10).unwrap(), s).unwrap()
    }

    #[test]
    fn white_input_stays_white_and_transform_is_orthogonal() {
        let w = whiten(&stacked(gaussian(3, 500, 1)));
        // w already has identity covariance; refitting must give an orthogonal map.
        let model = fit_whitener(&w, 1e-10).unwrap();
        let h = model.transform();
        let hht = h * h.transpose();
        assert!((hht - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
        assert!(whiteness_error(&apply_whitener(&model, &w).unwrap()) < 1e-10);
    }

    #[test]
    fn diagonal_covariance_is_whitened() {
        // Columns (±2, 0) and (0, ±1): zero mean, covariance diag(4, 1).
        let data = DMatrix::from_row_slice(2, 4, &[2.0, -2.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        let s = stacked(data * 2f64.sqrt());
        let w = whiten(&s);
        let cov = sample_covariance(w.data());
        assert!((cov - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn constant_channel_is_clamped() {
        let mut data = gaussian(3, 400, 2);
        data.row_mut(1).fill(4.0);
        let model = fit_whitener(&stacked(data), 1e-10).unwrap();
        assert_eq!(model.clamped(), 1);
        assert!(model.transform().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_few_frames() {
        let s = stacked(gaussian(4, 4, 3));
        assert!(matches!(fit_whitener(&s, 1e-10), Err(BssError::InsufficientData(_))));
    }

    #[test]
    fn identity_model_is_a_no_op() {
        let s = stacked(gaussian(3, 20, 4));
        let out = apply_whitener(&WhiteningModel::identity(3), &s).unwrap();
        assert_eq!(out.data(), s.data());
    }

    #[test]
    fn empty_frames_rejected() {
        let s = stacked(DMatrix::zeros(2, 0));
        assert!(matches!(
            apply_whitener(&WhiteningModel::identity(2), &s),
            Err(BssError::InsufficientData(_))
        ));
        let wrong = stacked(gaussian(3, 5, 0));
        assert!(matches!(apply_whitener(&WhiteningModel::identity(2), &wrong), Err(BssError::Dimension(_))));
    }

    #[test]
    fn whiteness_error_arithmetic() {
        let w = whiten(&stacked(gaussian(2, 1000, 5)));
        assert!(whiteness_error(&w) <= 1e-10);
        // Covariance diag(2, 1).
        let data = DMatrix::from_row_slice(2, 4, &[2.0, -2.0, 0.0, 0.0, 0.0, 0.0, 2f64.sqrt(), -(2f64.sqrt())]);
        assert_abs_diff_eq!(whiteness_error(&stacked(data)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn whitening_embedded_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = gaussian(2, 3000, 7);
        let mixing = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = MultichannelSignal::new(mixing * raw).unwrap();
        let s = delay_embed(&x, 5).unwrap();
        assert!(whiteness_error(&whiten(&s)) <= 1e-6);
    }

    #[test]
    fn scale_equivariance() {
        let data = gaussian(4, 800, 8) + DMatrix::from_element(4, 800, 0.3);
        let a = whiten(&stacked(data.clone()));
        let b = whiten(&stacked(data * 37.5));
        assert!((a.data() - b.data()).amax() < 1e-10);
    }

    #[test]
    fn lagged_correlations_structure() {
        let w = whiten(&stacked(gaussian(3, 2000, 9)));
        let set = compute_lagged_correlations(&w, 4).unwrap();
        assert_eq!(set.iter().count(), 9);
        assert!((set.get(0) - DMatrix::<f64>::identity(3, 3)).amax() <= 1e-6);
        assert_eq!(set.get(-3), &set.get(3).transpose());

        let only_zero = compute_lagged_correlations(&w, 0).unwrap();
        assert_eq!(only_zero.iter().count(), 1);
    }

    #[test]
    fn lagged_correlation_matches_definition() {
        let v = stacked(gaussian(2, 50, 10));
        let set = compute_lagged_correlations(&v, 3).unwrap();
        let d = v.data();
        for l in 0..=3usize {
            for a in 0..2 {
                for b in 0..2 {
                    let mut sum = 0.0;
                    for k in l..50 {
                        sum += d[(a, k)] * d[(b, k - l)];
                    }
                    assert_abs_diff_eq!(set.get(l as isize)[(a, b)], sum / (50 - l) as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn iid_lagged_correlations_are_small() {
        let n = 100_000;
        let w = whiten(&stacked(gaussian(2, n, 11)));
        let set = compute_lagged_correlations(&w, 3).unwrap();
        let bound = 5.0 / (n as f64).sqrt();
        for (lag, r) in set.iter().filter(|(l, _)| *l != 0) {
            assert!(r.amax() <= bound, "lag {lag}: {}", r.amax());
        }
    }

    #[test]
    fn lag_window_too_large() {
        let v = stacked(gaussian(2, 10, 12));
        assert!(matches!(compute_lagged_correlations(&v, 10), Err(BssError::InsufficientData(_))));
    }
}
