use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Nonlinearity;
use crate::error::{BssError, Result};

/// Extraction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Rows extracted one at a time, each constrained against the rows before it.
    #[default]
    Deflation,
    /// All rows updated every sweep, each constrained against all the others.
    Symmetric,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Deflation => "deflation",
            Mode::Symmetric => "symmetric",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "deflation" => Ok(Mode::Deflation),
            "symmetric" => Ok(Mode::Symmetric),
            other => Err(format!("unknown mode `{other}` (expected deflation or symmetric)")),
        }
    }
}

/// Matrix norm for the symmetric-mode stopping rule `‖|W′Wᵀ| − I‖ ≤ tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopNorm {
    #[default]
    Spectral,
    MaxAbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    /// Demixing filter order `Q`.
    pub embed_order: usize,
    /// Lag half-width `L`; `None` means `2Q`.
    pub lag_window: Option<usize>,
    /// Effective-rank threshold `α` on the cumulative singular-value ratio.
    pub rank_threshold: f64,
    pub tol: f64,
    /// Iteration cap per row (deflation) or sweep cap (symmetric).
    pub max_iter: usize,
    pub mode: Mode,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    pub stop_norm: StopNorm,
    /// Relative floor for covariance eigenvalues during whitening.
    pub eigenvalue_floor: f64,
    /// Re-randomizations allowed when a row collapses onto its constraint span.
    pub max_reinit: usize,
    /// Iterations without a new best residual before damping kicks in.
    pub damping_window: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            embed_order: 20,
            lag_window: None,
            rank_threshold: 0.99995,
            tol: 1e-7,
            max_iter: 500,
            mode: Mode::Deflation,
            nonlinearity: Nonlinearity::Tanh,
            seed: 0,
            stop_norm: StopNorm::Spectral,
            eigenvalue_floor: 1e-10,
            max_reinit: 5,
            damping_window: 20,
        }
    }
}

impl SeparationConfig {
    pub fn lags(&self) -> usize {
        self.lag_window.unwrap_or(2 * self.embed_order)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(BssError::InvalidConfig(msg));
        if self.embed_order == 0 {
            return fail("embed_order must be at least 1".into());
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold <= 1.0) {
            return fail(format!("rank_threshold must lie in (0, 1], got {}", self.rank_threshold));
        }
        if !(self.tol > 0.0) {
            return fail(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return fail("max_iter must be at least 1".into());
        }
        if !(self.eigenvalue_floor > 0.0) {
            return fail(format!("eigenvalue_floor must be positive, got {}", self.eigenvalue_floor));
        }
        if self.damping_window == 0 {
            return fail("damping_window must be at least 1".into());
        }
        Ok(())
    }
}
