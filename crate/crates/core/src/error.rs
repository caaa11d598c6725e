use std::path::PathBuf;

use star_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = StarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StarError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("layout: {0}")]
    Layout(String),

    #[error("data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    /// Epoch and step count from 1.
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NumericAbort { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl StarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StarError::Io { path: path.into(), source }
    }
}
