use std::path::PathBuf;

use stem_core::StemError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Config { flag: &'static str, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{flag}: {source}")]
    Core {
        flag: &'static str,
        #[source]
        source: StemError,
    },
}

impl CliError {
    pub fn config(flag: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            flag,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for I/O, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Core { source, .. } => match source {
                StemError::InvalidArgument { .. }
                | StemError::BandwidthTooSmall { .. }
                | StemError::GridMismatch { .. }
                | StemError::Design(_) => 2,
                StemError::Degenerate(_)
                | StemError::NoQualifyingMaxima { .. }
                | StemError::MissingPValue { .. }
                | StemError::Numeric(_) => 4,
            },
        }
    }
}

/// Attaches the flag a core error should be reported against.
pub trait Flag<T> {
    fn flag(self, flag: &'static str) -> Result<T, CliError>;
}

impl<T> Flag<T> for Result<T, StemError> {
    fn flag(self, flag: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { flag, source })
    }
}
