use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error("input contains no points")]
    EmptyInput,
    #[error("need at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("reference cloud is empty or lacks normals")]
    EmptyReference,
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("fit does not match the hierarchy: {0}")]
    InvalidFit(String),
    #[error("every chunk failed to reconstruct")]
    AllChunksFailed,
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::EmptyInput => "EmptyInput",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::InvalidInput(_) => "InvalidInput",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::SizeMismatch { .. } => "SizeMismatch",
            Error::Format(_) => "FormatError",
            Error::EmptyReference => "EmptyReference",
            Error::EmptyMesh => "EmptyMesh",
            Error::InvalidFit(_) => "InvalidFit",
            Error::AllChunksFailed => "AllChunksFailed",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(record: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            record,
            message: message.into(),
        }
    }
}
