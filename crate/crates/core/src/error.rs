use thiserror::Error;

/// Errors raised by the certification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "factorization of the regularized Gram matrix failed at pivot {pivot} \
         (size {size}, ridge {ridge:e}, largest diagonal {max_diag:e})"
    )]
    Factorization {
        pivot: usize,
        size: usize,
        ridge: f64,
        max_diag: f64,
    },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        last_iterate: Vec<f64>,
    },

    #[error("infeasible interval bounds: {0}")]
    Infeasible(String),

    #[error("unsupported region: {0}")]
    UnsupportedRegion(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
