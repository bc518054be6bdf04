use std::path::PathBuf;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown object type `{0}`")]
    UnknownObjectType(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
