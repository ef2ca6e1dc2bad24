use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}, {z}) lies outside the grid bounding box")]
    OutOfDomain { x: f64, y: f64, z: f64 },

    #[error("vertex ({0}, {1}, {2}) is on the grid boundary")]
    BoundaryVertex(usize, usize, usize),

    #[error("interpolated gradient norm {0:e} is too small to define a normal")]
    DegenerateNormal(f64),

    #[error("non-finite gradient entry at sample {0}")]
    NonFiniteGradient(usize),

    #[error("stage {stage} diverged: loss {loss:e} exceeds {factor}x its initial value {initial:e}")]
    StageDiverged {
        stage: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },

    #[error("malformed {what} in {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            what,
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
