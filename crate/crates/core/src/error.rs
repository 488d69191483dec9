use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty point set")]
    EmptySet,
    #[error("epsilon must be nonnegative and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("point {index} lies below the reference point in coordinate {coord}")]
    BelowReference { index: usize, coord: usize },
    #[error("exact box hypervolume supports d <= 4, got d = {0}; use the Monte-Carlo oracle")]
    DimensionTooHigh(usize),
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
