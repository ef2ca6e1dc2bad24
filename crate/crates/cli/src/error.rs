use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for bad input, 2 for numeric failure, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<sdftrace::Error> for CliError {
    fn from(e: sdftrace::Error) -> Self {
        use sdftrace::Error as E;
        match e {
            E::InvalidArgument(_) | E::Format { .. } => CliError::Validation(e.to_string()),
            E::Io { path, source } => CliError::Io { path, source },
            E::OutOfDomain { .. }
            | E::BoundaryVertex(..)
            | E::DegenerateNormal(_)
            | E::NonFiniteGradient(_)
            | E::StageDiverged { .. } => CliError::Numeric(e.to_string()),
        }
    }
}
