//! Constrained fixed-point extraction of the separating matrix.

mod config;
pub mod constraint;
mod driver;
mod nonlinearity;

pub use config::{Mode, SeparationConfig, StopNorm};
pub use constraint::{
    build_constraint_block, effective_rank_basis, energy_ratios, project_out, ConstraintBasis,
};
pub use driver::{
    constraint_residual, convergence_metric, extract_outputs, fixed_point_update, negentropy_proxy,
    run, run_deflation, run_symmetric, RowReport, SeparationModel,
};
pub use nonlinearity::Nonlinearity;
