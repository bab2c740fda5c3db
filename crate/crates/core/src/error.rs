use std::path::PathBuf;

use thiserror::Error;

use crate::cmnet::checkpoint::CheckpointError;
use crate::nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("covariance matrix is not positive definite ({0})")]
    SingularCovariance(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model stage {actual} cannot be used here (expected {expected})")]
    WrongStage {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("cmnet detector requested but no checkpoint or offline training plan was supplied")]
    MissingCheckpoint,

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
