use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad category of a failure, used by the command line front-end to pick
/// an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or argument (exit code 2).
    Config,
    /// Malformed or inconsistent input data (exit code 3).
    Data,
    /// A computed result broke one of the library's own invariants (exit code 4).
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record `{id}`: {message}")]
    Validation { id: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("stage `{stage}` failed on `{item}`: {source}")]
    Stage {
        stage: &'static str,
        item: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, item: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            item: item.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorKind::Config,
            Error::Invariant(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
