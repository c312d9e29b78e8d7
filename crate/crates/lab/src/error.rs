use std::path::PathBuf;

use thiserror::Error;

use crate::trace::RunTrace;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Engine(#[from] dam_core::Error),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<RunTrace> },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, LabError::Config { .. })
            || matches!(self, LabError::Engine(dam_core::Error::Config(_)))
    }
}
