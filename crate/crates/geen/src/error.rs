use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GeenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GeenError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {message}")]
    Schema { path: PathBuf, row: usize, column: String, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training failed at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: geen_core::Error,
    },
    #[error(transparent)]
    Core(#[from] geen_core::Error),
}

impl GeenError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeenError::Io { path: path.into(), source }
    }

    /// True for numerical failures of a run (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GeenError::Training { .. }
                | GeenError::Core(geen_core::Error::DegenerateScale { .. })
                | GeenError::Core(geen_core::Error::UndefinedCorrelation)
        )
    }
}
