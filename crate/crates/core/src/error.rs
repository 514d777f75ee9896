use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, stable across versions. The HTTP layer and the
/// C ABI both map errors through this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    InvalidArgument,
    CheckpointMismatch,
    NotFound,
    Gone,
    Conflict,
    Parse,
    Io,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::InvalidArgument => "invalid_argument",
            ErrorKind::CheckpointMismatch => "checkpoint_mismatch",
            ErrorKind::NotFound => "not_found",
            ErrorKind::Gone => "gone",
            ErrorKind::Conflict => "conflict",
            ErrorKind::Parse => "parse_error",
            ErrorKind::Io => "io_error",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },

    #[error("selection masks overlap at sphere index {index}")]
    OverlappingMasks { index: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("gone: {0}")]
    Gone(String),

    #[error("version conflict: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Error::Parse(message.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument { .. } | Error::OverlappingMasks { .. } => {
                ErrorKind::InvalidArgument
            }
            Error::CheckpointMismatch(_) => ErrorKind::CheckpointMismatch,
            Error::NotFound(_) => ErrorKind::NotFound,
            Error::Gone(_) => ErrorKind::Gone,
            Error::VersionConflict { .. } => ErrorKind::Conflict,
            Error::Parse(_) => ErrorKind::Parse,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}
