use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("estimated count {k_hat} exceeds the largest tabulated count {max_k}")]
    OutOfTable { k_hat: usize, max_k: usize },

    #[error("calibration failed: no preamble length in the search range meets threshold {threshold} at K = {k}")]
    CalibrationFailure { k: usize, threshold: f64 },

    #[error("malformed lookup table: {0}")]
    TableFormat(String),

    #[error("malformed result table: {0}")]
    ResultFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
