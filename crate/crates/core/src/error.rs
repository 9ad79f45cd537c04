use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fingerprinting and recommendation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed audio: {0}")]
    Decode(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("insufficient audio: need {needed_s:.3} s, track has {available_s:.3} s")]
    InsufficientAudio { needed_s: f64, available_s: f64 },

    #[error("value outside the function domain: {0}")]
    Domain(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("onset envelope carries no onsets")]
    NoOnsets,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("track not found: {0}")]
    NotFound(String),

    #[error("invalid k = {k}: must be between 1 and {max}")]
    InvalidK { k: usize, max: usize },

    #[error("genre tags missing for: {}", .0.join(", "))]
    TagsMissing(Vec<String>),

    #[error("duplicate track id: {0}")]
    DuplicateTrack(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no decodable tracks in corpus")]
    EmptyCorpus,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
