use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing column `{column}` for field `{field}` in {path}")]
    Schema { path: PathBuf, field: String, column: String },
    #[error("{path}: row {row}: column `{column}`: cannot parse `{value}`")]
    Parse { path: PathBuf, row: usize, column: String, value: String },
    #[error("missing upstream artifact {path} (run `{producer}` first)")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] lanekit_core::Error),
}

/// Machine-readable report printed for failed runs.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    /// 0 success, 1 validation, 2 usage, 3 missing upstream artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Schema { .. } => "schema",
            CliError::Parse { .. } => "parse",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Core(_) => "validation",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { kind: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Format { path: path.into(), msg: msg.to_string() }
    }
}
