use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] progress_core::Error),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Schema(String),

    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "invalid-config",
            CliError::Schema(_) => "schema-mismatch",
            CliError::Malformed { .. } => "malformed-file",
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "missing-input"
            }
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "invalid-config" => 3,
            "missing-input" => 4,
            "schema-mismatch" => 5,
            "malformed-file" | "version-mismatch" | "dimension" | "missing-actions"
            | "empty-dataset" => 6,
            "non-finite" | "contract-violation" | "degenerate-triplet" => 7,
            _ => 1,
        }
    }

    /// `error[<category>]: <message>` on a single line.
    pub fn report(&self) -> String {
        let message = self
            .to_string()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!("error[{}]: {message}", self.category())
    }
}
