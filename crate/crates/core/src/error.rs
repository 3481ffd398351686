use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the study region")]
    OutOfDomain { x: f64, y: f64 },

    #[error("missing value in cell {cell}")]
    MissingData { cell: usize },

    #[error("data inconsistency: {0}")]
    DataInconsistency(String),

    #[error("degenerate specification: {0}")]
    DegenerateSpec(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mark probability undefined at cell {cell}: all intensities are zero")]
    UndefinedProbability { cell: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
