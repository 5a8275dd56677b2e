use thiserror::Error;

/// Errors produced by the separation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BssError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The candidate direction was absorbed by the constraint span.
    #[error("direction collapsed onto the constraint subspace (residual norm {norm:e})")]
    DegenerateDirection { norm: f64 },

    #[error("extraction of row {row} failed after {attempts} re-initializations")]
    ExtractionFailure { row: usize, attempts: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

pub type Result<T> = std::result::Result<T, BssError>;
