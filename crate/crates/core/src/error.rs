use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error in {path}: {detail}")]
    Ingestion { path: PathBuf, detail: String },

    #[error("ingestion error in {path} line {line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("checkpoint version {found} is incompatible with supported version {supported}")]
    Incompatible { found: u32, supported: u32 },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("frozen-state contract violated: {0}")]
    FrozenState(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
