use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A distribution has (numerically) no mass where it needs some.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("line {line}: {message}")]
    Ingestion { line: usize, message: String },

    /// A state or objective became non-finite while integrating.
    #[error("numerical failure at step {step}: {message}")]
    NumericalFailure { step: usize, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::DegenerateDistribution(_) | Error::Ingestion { .. } | Error::Config { .. } => {
                1
            }
            Error::NumericalFailure { .. } => 2,
            Error::Io { .. } | Error::Csv(_) => 3,
        }
    }
}
