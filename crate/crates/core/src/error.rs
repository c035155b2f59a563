use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("input outside kernel domain: {0}")]
    DomainViolation(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("iteration limit {iters} reached without convergence (best estimate {best:.17e})")]
    NotConverged { iters: usize, best: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("malformed data at line {line}: {reason}")]
    DataFormat { line: usize, reason: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
