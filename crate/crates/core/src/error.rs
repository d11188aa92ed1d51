use thiserror::Error;

/// Errors raised by the factor-analysis routines.
#[derive(Debug, Error)]
pub enum FaError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("descent certificate violated at iteration {iteration}: {detail}")]
    Certification { iteration: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FaError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(FaError::Domain(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(FaError::Numerical(msg.into()))
}
