use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("dimension inconsistency: {0}")]
    Dimension(String),

    #[error("undefined progress ratio: initial index {initial} equals goal index {goal}")]
    DegenerateTriplet { initial: usize, goal: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss {loss} at batch entry {index}: {detail}")]
    NonFiniteLoss {
        loss: f64,
        index: usize,
        detail: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("missing actions in trajectory {0}")]
    MissingActions(u64),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-parsable category name, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::ContractViolation(_) => "contract-violation",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::ShapeMismatch { .. } | Error::Dimension(_) => "dimension",
            Error::DegenerateTriplet { .. } => "degenerate-triplet",
            Error::NonFinite(_) | Error::NonFiniteLoss { .. } => "non-finite",
            Error::Version { .. } => "version-mismatch",
            Error::Malformed(_) => "malformed-file",
            Error::MissingActions(_) => "missing-actions",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "missing-input"
            }
            Error::Io { .. } => "io",
        }
    }
}
