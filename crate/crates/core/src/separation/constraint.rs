//! Diagonalization constraint: the block of lagged correlations against the
//! other rows, its effective-rank left singular basis, and the projection that
//! removes that basis from a candidate row.

use nalgebra::{DMatrix, DVector, SVD};

use super::Mode;
use crate::error::{BssError, Result};
use crate::whitening::LaggedCorrelationSet;

/// Norm below which a projected direction counts as absorbed.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Orthonormal basis `U_(r)` of the dominant constraint directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBasis {
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl ConstraintBasis {
    /// Empty basis in dimension `dim`.
    pub fn empty(dim: usize) -> Self {
        Self { basis: DMatrix::zeros(dim, 0), singular_values: Vec::new() }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Full singular spectrum of the block, non-increasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }
}

/// Cumulative energy ratios `μ(1), …, μ(n)` of a non-increasing spectrum.
///
/// `μ(n)` is exactly 1 whenever the spectrum is not identically zero.
pub fn energy_ratios(singular_values: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(singular_values.len());
    let mut acc = 0.0;
    for s in singular_values {
        acc += s * s;
        cumulative.push(acc);
    }
    let total = acc;
    if total == 0.0 {
        return vec![0.0; singular_values.len()];
    }
    cumulative.into_iter().map(|c| (c / total).sqrt()).collect()
}

/// Columns `R_v(l)·w_j` for every constraining row `j` (row-major over `j`,
/// lags ascending from `−L` to `L`).
///
/// Deflation constrains `target` against rows `0..target`; symmetric mode
/// against every other row that is not identically zero.
pub fn build_constraint_block(
    correlations: &LaggedCorrelationSet,
    unmixing: &DMatrix<f64>,
    target: usize,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let dim = correlations.dim();
    if unmixing.ncols() != dim {
        return Err(BssError::Dimension(format!(
            "rows of length {} against correlations of dimension {dim}",
            unmixing.ncols()
        )));
    }
    if target >= unmixing.nrows() {
        return Err(BssError::Dimension(format!(
            "row {target} out of range for {} rows",
            unmixing.nrows()
        )));
    }
    let rows: Vec<usize> = match mode {
        Mode::Deflation => (0..target).collect(),
        Mode::Symmetric => (0..unmixing.nrows())
            .filter(|&j| j != target && unmixing.row(j).iter().any(|&v| v != 0.0))
            .collect(),
    };
    let width = 2 * correlations.lags() + 1;
    let mut block = DMatrix::zeros(dim, rows.len() * width);
    for (slot, &j) in rows.iter().enumerate() {
        let w = unmixing.row(j).transpose();
        for (k, (_, r)) in correlations.iter().enumerate() {
            block.set_column(slot * width + k, &(r * &w));
        }
    }
    Ok(block)
}

/// Left singular vectors for the smallest `r` with `μ(r) ≥ α`.
pub fn effective_rank_basis(block: &DMatrix<f64>, alpha: f64) -> Result<ConstraintBasis> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(BssError::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let dim = block.nrows();
    if block.ncols() == 0 || dim == 0 {
        return Ok(ConstraintBasis::empty(dim));
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(BssError::Numeric("constraint block has non-finite entries".into()));
    }
    let svd = SVD::try_new(block.clone(), true, false, f64::EPSILON, 0)
        .ok_or_else(|| BssError::Numeric("SVD of the constraint block did not converge".into()))?;
    let u = svd.u.as_ref().ok_or_else(|| BssError::Numeric("SVD returned no left vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let rank = if singular_values[0] == 0.0 {
        0
    } else {
        energy_ratios(&singular_values)
            .iter()
            .position(|&mu| mu >= alpha)
            .map_or(singular_values.len(), |p| p + 1)
    };
    let mut basis = DMatrix::zeros(dim, rank);
    for (col, &k) in order.iter().take(rank).enumerate() {
        basis.set_column(col, &u.column(k));
    }
    Ok(ConstraintBasis { basis, singular_values })
}

/// `w − U_(r) U_(r)ᵀ w`. Fails when the remainder is numerically zero.
pub fn project_out(w: &DVector<f64>, basis: &ConstraintBasis) -> Result<DVector<f64>> {
    if w.len() != basis.dim() {
        return Err(BssError::Dimension(format!(
            "vector of length {} against basis of dimension {}",
            w.len(),
            basis.dim()
        )));
    }
    if basis.rank() == 0 {
        return Ok(w.clone());
    }
    let u = basis.basis();
    let result = w - u * u.tr_mul(w);
    let norm = result.norm();
    if norm < DEGENERATE_NORM {
        return Err(BssError::DegenerateDirection { norm });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StackedSignal;
    use crate::whitening::compute_lagged_correlations;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn correlations(dim: usize, lags: usize, seed: u64) -> LaggedCorrelationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = StackedSignal::from_matrix(gaussian(dim, 200, &mut rng), dim, 1).unwrap();
        compute_lagged_correlations(&v, lags).unwrap()
    }

    #[test]
    fn first_deflation_row_is_unconstrained() {
        let set = correlations(4, 2, 1);
        let w = DMatrix::from_element(3, 4, 0.5);
        assert_eq!(build_constraint_block(&set, &w, 0, Mode::Deflation).unwrap().ncols(), 0);
    }

    #[test]
    fn identity_correlation_gives_previous_row() {
        let set = correlations(4, 0, 2);
        // Replace R_v(0) by the identity through a whitened copy: check the
        // column equals R_v(0)·w_1 and, for R_v(0) ≈ I, approximately w_1.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = gaussian(2, 4, &mut rng);
        let block = build_constraint_block(&set, &w, 1, Mode::Deflation).unwrap();
        assert_eq!(block.ncols(), 1);
        let expected = set.get(0) * w.row(0).transpose();
        assert_eq!(block.column(0), expected.column(0));
    }

    #[test]
    fn symmetric_block_matches_column_definition() {
        let set = correlations(5, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gaussian(3, 5, &mut rng);
        let block = build_constraint_block(&set, &w, 1, Mode::Symmetric).unwrap();
        assert_eq!(block.ncols(), 6);
        let mut col = 0;
        for j in [0usize, 2] {
            for lag in -1isize..=1 {
                let expected = set.get(lag) * w.row(j).transpose();
                for r in 0..5 {
                    assert_abs_diff_eq!(block[(r, col)], expected[r], epsilon = 1e-15);
                }
                col += 1;
            }
        }
    }

    #[test]
    fn symmetric_block_skips_zero_rows() {
        let set = correlations(3, 1, 6);
        let mut w = DMatrix::from_element(3, 3, 0.2);
        w.row_mut(2).fill(0.0);
        assert_eq!(build_constraint_block(&set, &w, 0, Mode::Symmetric).unwrap().ncols(), 3);
    }

    #[test]
    fn exact_rank_from_known_spectrum() {
        let block = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 3.0, 0.0]));
        let basis = effective_rank_basis(&block, 0.99995).unwrap();
        assert_eq!(basis.rank(), 2);
        let mu = energy_ratios(basis.singular_values());
        assert_abs_diff_eq!(mu[0], 0.8, epsilon = 1e-15);
        assert_eq!(mu[1], 1.0);
    }

    #[test]
    fn identity_block_rank() {
        let n = 6;
        let block = DMatrix::<f64>::identity(n, n);
        for alpha in [0.1, 0.5, 0.8, 0.95, 1.0] {
            let r = effective_rank_basis(&block, alpha).unwrap().rank();
            assert!(((r as f64) / n as f64).sqrt() >= alpha - 1e-12);
            if r > 1 {
                assert!((((r - 1) as f64) / n as f64).sqrt() < alpha);
            }
        }
    }

    #[test]
    fn empty_and_zero_blocks() {
        assert_eq!(effective_rank_basis(&DMatrix::zeros(4, 0), 0.9).unwrap().rank(), 0);
        let zero = effective_rank_basis(&DMatrix::zeros(4, 3), 0.9).unwrap();
        assert_eq!(zero.rank(), 0);
        assert_eq!(zero.dim(), 4);
    }

    #[test]
    fn basis_is_orthonormal_and_spectrum_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = gaussian(8, 30, &mut rng);
        let basis = effective_rank_basis(&block, 0.99).unwrap();
        let u = basis.basis();
        let gram = u.tr_mul(u);
        assert!((gram - DMatrix::<f64>::identity(basis.rank(), basis.rank())).amax() <= 1e-10);
        assert!(basis.singular_values().windows(2).all(|p| p[0] >= p[1]));
        assert!(basis.singular_values().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn projection_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = effective_rank_basis(&gaussian(6, 3, &mut rng), 1.0).unwrap();
        assert_eq!(basis.rank(), 3);

        let first = basis.basis().column(0).into_owned();
        assert!(matches!(project_out(&first, &basis), Err(BssError::DegenerateDirection { .. })));

        let w = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let once = project_out(&w, &basis).unwrap();
        assert!(basis.basis().tr_mul(&once).amax() <= 1e-10);
        let twice = project_out(&once, &basis).unwrap();
        assert!((&twice - &once).amax() <= 1e-12);
        // Already orthogonal: unchanged.
        assert!((project_out(&once, &basis).unwrap() - &once).amax() <= 1e-12);

        let empty = ConstraintBasis::empty(6);
        assert_eq!(project_out(&w, &empty).unwrap(), w);
        assert!(matches!(project_out(&DVector::zeros(5), &empty), Err(BssError::Dimension(_))));
    }
}
