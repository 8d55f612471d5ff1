use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bfgnn::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status. Usage errors exit with 2 from the argument parser.
    pub fn exit_code(&self) -> i32 {
        use bfgnn::Error as E;
        match self {
            CliError::Io { .. } | CliError::Core(E::Io(_)) => 3,
            CliError::Parse { .. } | CliError::Json(_) | CliError::Core(E::Json(_) | E::Csv(_)) => 4,
            CliError::Config(_) | CliError::Core(E::Config(_) | E::Shape(_)) => 5,
            CliError::Core(E::InvalidGraph(_) | E::TooLarge(_) | E::EmptyManifest | E::NonFiniteGradient { .. }) => 6,
            CliError::Core(E::Refused(_)) => 7,
            CliError::Core(E::Diverged { .. }) => 8,
        }
    }
}
