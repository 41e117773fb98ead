use std::path::PathBuf;

use crate::audit::{AuditReadError, ConfigError};
use crate::classifier::ClassifyError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::rank::RankError;
use crate::retrieval::RetrievalError;
use crate::triage::TriageError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Audit(#[from] AuditReadError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    /// Threshold tuning found no band under the error cap; outputs were
    /// still written.
    #[error("no threshold band meets the error cap; wrote the lowest-error band")]
    Infeasible,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Error::Json {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Infeasible => exit::INFEASIBLE,
            _ => exit::DATA,
        }
    }
}
