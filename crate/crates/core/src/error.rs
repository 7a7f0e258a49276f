use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("support violation at index {index}: p = {p} but q = 0")]
    SupportViolation { index: usize, p: f64 },

    #[error("zero entry in reference distribution at index {0}")]
    ZeroEntry(usize),

    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("empty selection: {0}")]
    Empty(String),

    #[error("did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidParam(_)
                | Error::InvalidDist(_)
                | Error::Precondition(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
