use std::path::PathBuf;

use occuvt_core::Error as CoreError;

/// Errors surfaced by the command-line tool; each maps to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Input(_) => 2,
            CliError::Core(CoreError::InvalidArgument(_) | CoreError::Format(_)) => 2,
            CliError::Shape(_) | CliError::Core(CoreError::ShapeMismatch(_)) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("invalid JSON: {e}"))
    }
}
