use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constraint::{build_constraint_block, effective_rank_basis, project_out, ConstraintBasis};
use super::{Mode, Nonlinearity, SeparationConfig, StopNorm};
use crate::error::{BssError, Result};
use crate::signal::{MultichannelSignal, StackedSignal};
use crate::whitening::LaggedCorrelationSet;

/// Frames per partial sum; fixed so the reduction order never depends on the
/// thread count.
const CHUNK: usize = 4096;

const UNIT_TOL: f64 = 1e-8;

/// One fixed-point step `E{v g(wᵀv)} − E{g′(wᵀv)} w`, not normalized.
pub fn fixed_point_update(w: &DVector<f64>, whitened: &StackedSignal, nl: Nonlinearity) -> Result<DVector<f64>> {
    let dim = whitened.dim();
    if w.len() != dim {
        return Err(BssError::Dimension(format!(
            "vector of length {} against frames of dimension {dim}",
            w.len()
        )));
    }
    let frames = whitened.frames();
    if frames == 0 {
        return Err(BssError::InsufficientData("no frames".into()));
    }
    if (w.norm() - 1.0).abs() > UNIT_TOL {
        return Err(BssError::InvalidArgument(format!("w must have unit norm, got {}", w.norm())));
    }
    let v = whitened.data();
    let chunks = frames.div_ceil(CHUNK);
    let partials: Vec<(DVector<f64>, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let block = v.columns(start, CHUNK.min(frames - start));
            let u = block.tr_mul(w);
            let gu = u.map(|x| nl.g(x));
            let dg: f64 = u.iter().map(|&x| nl.g_prime(x)).sum();
            (block * gu, dg)
        })
        .collect();
    let mut first = DVector::zeros(dim);
    let mut second = 0.0;
    for (p, d) in partials {
        first += p;
        second += d;
    }
    let m = frames as f64;
    let result = first / m - w * (second / m);
    if result.iter().any(|x| !x.is_finite()) {
        return Err(BssError::Numeric("fixed-point update produced non-finite values".into()));
    }
    Ok(result)
}

/// Convergence record for one row of the separating matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    /// Iterations (deflation) or sweeps (symmetric) used.
    pub iterations: usize,
    /// Last `||wᵀw′| − 1|`.
    pub residual: f64,
    pub converged: bool,
    /// Effective rank of the constraint basis in force at the last step.
    pub rank: usize,
    pub reinitializations: usize,
    pub damped: bool,
}

/// Separating matrix `W` (`m × nQ`) with per-row reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationModel {
    unmixing: DMatrix<f64>,
    reports: Vec<RowReport>,
    config: SeparationConfig,
}

impl SeparationModel {
    pub fn from_parts(unmixing: DMatrix<f64>, reports: Vec<RowReport>, config: SeparationConfig) -> Result<Self> {
        if reports.len() != unmixing.nrows() {
            return Err(BssError::Dimension(format!(
                "{} reports for {} rows",
                reports.len(),
                unmixing.nrows()
            )));
        }
        if unmixing.iter().any(|x| !x.is_finite()) {
            return Err(BssError::Numeric("separating matrix has non-finite entries".into()));
        }
        for (i, row) in unmixing.row_iter().enumerate() {
            if (row.norm() - 1.0).abs() > 1e-10 {
                return Err(BssError::InvalidArgument(format!("row {i} has norm {}", row.norm())));
            }
        }
        Ok(Self { unmixing, reports, config })
    }

    pub fn unmixing(&self) -> &DMatrix<f64> {
        &self.unmixing
    }

    pub fn reports(&self) -> &[RowReport] {
        &self.reports
    }

    pub fn config(&self) -> &SeparationConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let w = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = w.norm();
        if norm > 0.0 {
            return w / norm;
        }
    }
}

/// `||aᵀb| − 1|`; shared by both drivers so `m = 1` runs agree bit for bit.
fn alignment_residual(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b).abs() - 1.0).abs()
}

/// Tracks the best residual so far and switches damping on once it has not
/// improved for `window` steps.
struct Damper {
    window: usize,
    best: f64,
    since_best: usize,
    active: bool,
}

impl Damper {
    fn new(window: usize) -> Self {
        Self { window, best: f64::INFINITY, since_best: 0, active: false }
    }

    fn observe(&mut self, residual: f64) {
        if residual < self.best {
            self.best = residual;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.window {
                self.active = true;
            }
        }
    }

    /// Averages the normalized candidate with the sign-aligned previous row.
    fn apply(&self, candidate: DVector<f64>, previous: &DVector<f64>) -> DVector<f64> {
        if !self.active {
            return candidate;
        }
        let aligned = if candidate.dot(previous) < 0.0 { -previous } else { previous.clone() };
        let mixed = (candidate + aligned) * 0.5;
        let norm = mixed.norm();
        if norm < f64::EPSILON {
            return previous.clone();
        }
        mixed / norm
    }
}

/// Update, project, normalize, then damp.
fn step(
    w: &DVector<f64>,
    whitened: &StackedSignal,
    basis: &ConstraintBasis,
    nl: Nonlinearity,
    damper: &Damper,
) -> Result<DVector<f64>> {
    let raw = fixed_point_update(w, whitened, nl)?;
    let projected = project_out(&raw, basis)?;
    let norm = projected.norm();
    if norm < super::constraint::DEGENERATE_NORM {
        return Err(BssError::DegenerateDirection { norm });
    }
    Ok(damper.apply(projected / norm, w))
}

fn check_inputs(
    whitened: &StackedSignal,
    correlations: &LaggedCorrelationSet,
    config: &SeparationConfig,
    count: usize,
) -> Result<()> {
    config.validate()?;
    if count == 0 {
        return Err(BssError::InvalidArgument("at least one source must be requested".into()));
    }
    if count > whitened.dim() {
        return Err(BssError::InvalidArgument(format!(
            "{count} sources exceed the frame dimension {}",
            whitened.dim()
        )));
    }
    if correlations.dim() != whitened.dim() {
        return Err(BssError::Dimension(format!(
            "correlations of dimension {} against frames of dimension {}",
            correlations.dim(),
            whitened.dim()
        )));
    }
    Ok(())
}

/// Extracts rows one at a time, each constrained against the rows already
/// fixed.
pub fn run_deflation(
    whitened: &StackedSignal,
    correlations: &LaggedCorrelationSet,
    config: &SeparationConfig,
    count: usize,
) -> Result<SeparationModel> {
    check_inputs(whitened, correlations, config, count)?;
    let dim = whitened.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut unmixing = DMatrix::zeros(count, dim);
    let mut reports = Vec::with_capacity(count);

    for row in 0..count {
        let block = build_constraint_block(correlations, &unmixing, row, Mode::Deflation)?;
        let basis = effective_rank_basis(&block, config.rank_threshold)?;
        let mut reinitializations = 0;
        let (w, report) = 'attempt: loop {
            let outcome = extract_row(whitened, &basis, config, &mut rng, reinitializations);
            match outcome {
                Err(BssError::DegenerateDirection { .. }) => {
                    reinitializations += 1;
                    if reinitializations > config.max_reinit {
                        return Err(BssError::ExtractionFailure { row, attempts: config.max_reinit });
                    }
                }
                other => break 'attempt other?,
            }
        };
        unmixing.set_row(row, &w.transpose());
        reports.push(report);
    }
    SeparationModel::from_parts(unmixing, reports, config.clone())
}

fn extract_row(
    whitened: &StackedSignal,
    basis: &ConstraintBasis,
    config: &SeparationConfig,
    rng: &mut ChaCha8Rng,
    reinitializations: usize,
) -> Result<(DVector<f64>, RowReport)> {
    let mut w = random_unit(whitened.dim(), rng);
    if basis.rank() > 0 {
        w = project_out(&w, basis)?;
        w /= w.norm();
    }
    let mut damper = Damper::new(config.damping_window);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let next = step(&w, whitened, basis, config.nonlinearity, &damper)?;
        residual = alignment_residual(&w, &next);
        w = next;
        if residual <= config.tol {
            converged = true;
            break;
        }
        damper.observe(residual);
    }
    let report = RowReport {
        iterations,
        residual,
        converged,
        rank: basis.rank(),
        reinitializations,
        damped: damper.active,
    };
    Ok((w, report))
}

/// Stopping metric `‖|W_new W_oldᵀ| − I‖` under the chosen norm.
pub fn convergence_metric(new: &DMatrix<f64>, old: &DMatrix<f64>, norm: StopNorm) -> Result<f64> {
    if new.shape() != old.shape() {
        return Err(BssError::Dimension(format!("{:?} against {:?}", new.shape(), old.shape())));
    }
    let m = new.nrows();
    if m == 1 {
        let a = new.row(0).transpose();
        let b = old.row(0).transpose();
        return Ok(alignment_residual(&a, &b));
    }
    let gap = (new * old.transpose()).abs() - DMatrix::<f64>::identity(m, m);
    Ok(match norm {
        StopNorm::MaxAbs => gap.amax(),
        StopNorm::Spectral => gap
            .try_svd(false, false, f64::EPSILON, 0)
            .ok_or_else(|| BssError::Numeric("SVD of the stopping matrix did not converge".into()))?
            .singular_values
            .max(),
    })
}

/// Updates every row each sweep, each constrained against all the others
/// at their current values.
pub fn run_symmetric(
    whitened: &StackedSignal,
    correlations: &LaggedCorrelationSet,
    config: &SeparationConfig,
    count: usize,
) -> Result<SeparationModel> {
    check_inputs(whitened, correlations, config, count)?;
    let dim = whitened.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut unmixing = DMatrix::zeros(count, dim);
    for row in 0..count {
        unmixing.set_row(row, &random_unit(dim, &mut rng).transpose());
    }
    let mut dampers: Vec<Damper> = (0..count).map(|_| Damper::new(config.damping_window)).collect();
    let mut ranks = vec![0; count];
    let mut reinits = vec![0; count];
    let mut row_residuals = vec![f64::INFINITY; count];
    let mut metric = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < config.max_iter {
        sweeps += 1;
        let previous = unmixing.clone();
        for row in 0..count {
            let block = build_constraint_block(correlations, &unmixing, row, Mode::Symmetric)?;
            let basis = effective_rank_basis(&block, config.rank_threshold)?;
            ranks[row] = basis.rank();
            let w = unmixing.row(row).transpose();
            let next = loop {
                match step(&w, whitened, &basis, config.nonlinearity, &dampers[row]) {
                    Err(BssError::DegenerateDirection { .. }) => {
                        reinits[row] += 1;
                        if reinits[row] > config.max_reinit {
                            return Err(BssError::ExtractionFailure { row, attempts: config.max_reinit });
                        }
                        let fresh = random_unit(dim, &mut rng);
                        match project_out(&fresh, &basis) {
                            Ok(p) => break p.normalize(),
                            Err(BssError::DegenerateDirection { .. }) => continue,
                            Err(e) => return Err(e),
                        }
                    }
                    other => break other?,
                }
            };
            row_residuals[row] = alignment_residual(&w, &next);
            unmixing.set_row(row, &next.transpose());
        }
        metric = convergence_metric(&unmixing, &previous, config.stop_norm)?;
        if metric <= config.tol {
            converged = true;
            break;
        }
        for (damper, &r) in dampers.iter_mut().zip(&row_residuals) {
            damper.observe(if count == 1 { metric } else { r });
        }
    }
    let reports = (0..count)
        .map(|row| RowReport {
            iterations: sweeps,
            residual: if count == 1 { metric } else { row_residuals[row] },
            converged,
            rank: ranks[row],
            reinitializations: reinits[row],
            damped: dampers[row].active,
        })
        .collect();
    SeparationModel::from_parts(unmixing, reports, config.clone())
}

/// Dispatches on `config.mode`.
pub fn run(
    whitened: &StackedSignal,
    correlations: &LaggedCorrelationSet,
    config: &SeparationConfig,
    count: usize,
) -> Result<SeparationModel> {
    match config.mode {
        Mode::Deflation => run_deflation(whitened, correlations, config, count),
        Mode::Symmetric => run_symmetric(whitened, correlations, config, count),
    }
}

/// `y(k) = W v(k)`.
pub fn extract_outputs(model: &SeparationModel, whitened: &StackedSignal) -> Result<MultichannelSignal> {
    let w = model.unmixing();
    if w.ncols() != whitened.dim() {
        return Err(BssError::Dimension(format!(
            "separating rows of length {} against frames of dimension {}",
            w.ncols(),
            whitened.dim()
        )));
    }
    if w.nrows() == 0 {
        return Ok(MultichannelSignal::empty(whitened.frames()));
    }
    MultichannelSignal::new(w * whitened.data())
}

/// `(E{G(y)} − E{G(z)})²` with the Gaussian reference supplied.
pub fn negentropy_proxy(y: &[f64], nl: Nonlinearity, gaussian_reference: f64) -> f64 {
    if y.is_empty() {
        return f64::NAN;
    }
    let mean = y.iter().map(|&u| nl.contrast(u)).sum::<f64>() / y.len() as f64;
    (mean - gaussian_reference).powi(2)
}

/// Largest `|w_iᵀ R_v(l) w_j|` over `i ≠ j` and every lag in the window.
pub fn constraint_residual(unmixing: &DMatrix<f64>, correlations: &LaggedCorrelationSet) -> Result<f64> {
    if unmixing.ncols() != correlations.dim() {
        return Err(BssError::Dimension(format!(
            "rows of length {} against correlations of dimension {}",
            unmixing.ncols(),
            correlations.dim()
        )));
    }
    let mut worst: f64 = 0.0;
    for (_, r) in correlations.iter() {
        let cross = unmixing * r * unmixing.transpose();
        for i in 0..cross.nrows() {
            for j in 0..cross.ncols() {
                if i != j {
                    worst = worst.max(cross[(i, j)].abs());
                }
            }
        }
    }
    Ok(worst)
}
