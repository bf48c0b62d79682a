use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub const EXIT_CHECK_FAILED: u8 = 1;
    pub const EXIT_VALIDATION: u8 = 2;
    pub const EXIT_IO: u8 = 3;
    pub const EXIT_NUMERICAL: u8 = 4;

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => Self::EXIT_VALIDATION,
            CliError::Io { .. } => Self::EXIT_IO,
            CliError::Numerical(_) => Self::EXIT_NUMERICAL,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_scene(self, name: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("scene {name}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("scene {name}: {m}")),
            io => io,
        }
    }
}

impl From<hmor_core::Error> for CliError {
    fn from(e: hmor_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
