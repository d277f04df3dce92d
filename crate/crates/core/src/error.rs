//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MhcError {
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, MhcError>;

impl MhcError {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        MhcError::Shape { op, details: details.into() }
    }
}
