use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unusable configuration or input files.
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    /// The run itself broke down; outputs written so far are kept.
    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] ncf_core::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for configuration and validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        use ncf_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(E::NonFinite { .. } | E::NotConverged { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
