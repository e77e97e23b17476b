use std::io;
use std::path::PathBuf;

/// Failure of a command, carrying its documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid case id `{0}`")]
    InvalidCase(String),
    #[error("cannot write {}: {source}", path.display())]
    Unwritable { path: PathBuf, source: io::Error },
    #[error("{0} (rerun with --force to override)")]
    HashMismatch(String),
    #[error("{file}: line {line}, column `{column}`: {message}")]
    Schema { file: String, line: usize, column: String, message: String },
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dopfn_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InvalidCase(_) | CliError::Usage(_) => 2,
            CliError::Unwritable { .. } => 3,
            CliError::HashMismatch(_) => 4,
            CliError::Schema { .. } => 5,
            _ => 1,
        }
    }

    pub fn unwritable(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Unwritable { path: path.into(), source }
    }

    pub fn read(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Read { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format { path: path.into(), message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
