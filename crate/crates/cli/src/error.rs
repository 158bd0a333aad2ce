use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output directory {0} is locked by another run (remove .lock if stale)")]
    Locked(PathBuf),

    #[error(transparent)]
    Core(#[from] hyperflow::Error),

    /// The command ran but its check did not pass.
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for rejected configuration or preconditions, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        use hyperflow::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Core(E::InvalidConfig(_) | E::EpsilonGate { .. } | E::DegenerateGrid(_)) => 2,
            _ => 1,
        }
    }
}
