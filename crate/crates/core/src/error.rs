use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid {field} for {id}: {reason}")]
    Invariant {
        id: String,
        field: &'static str,
        reason: String,
    },

    #[error("unknown character {name:?} in movie {movie_id}")]
    UnknownCharacter { movie_id: String, name: String },

    #[error("unknown {kind} {id:?}")]
    NotFound { kind: &'static str, id: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("missing feature {0:?}")]
    MissingFeature(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conflict: {0}")]
    Conflict(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(id: impl Into<String>, field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invariant {
            id: id.into(),
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
