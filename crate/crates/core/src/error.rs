//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by database construction, scoring, refinement and file I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Quaternion input that cannot be normalized (zero or non-finite norm).
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),

    /// Embedding dimensions disagree where they must match.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Duplicate entry id within one database.
    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Zero-norm embedding fed to a similarity computation. Kept distinct
    /// from an empty retrieval, which legitimately scores 0.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// Malformed database / query file. `offset` is a byte offset for binary
    /// payloads and a line number for text files.
    #[error("format error in {path} at {unit} {offset}: {message}")]
    Format {
        path: String,
        unit: &'static str,
        offset: u64,
        message: String,
    },

    /// Synthetic scene generation cannot satisfy the requested spec.
    #[error("scene generation failed: {0}")]
    Generation(String),

    /// Argument outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Failure attributed to one query of a batch.
    #[error("query `{id}`: {source}")]
    Query {
        id: String,
        #[source]
        source: Box<CoreError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// I/O failure with the offending path attached.
    #[error("cannot access {path}: {source}")]
    Path {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    /// Wrap an error with the id of the query it belongs to.
    pub fn for_query(self, id: &str) -> CoreError {
        CoreError::Query {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Attach the path to an I/O failure.
    pub fn path(path: &std::path::Path, source: std::io::Error) -> CoreError {
        CoreError::Path {
            path: path.display().to_string(),
            source,
        }
    }

    /// Build a format error tied to a location in a file.
    pub fn format(path: &std::path::Path, unit: &'static str, offset: u64, message: impl Into<String>) -> CoreError {
        CoreError::Format {
            path: path.display().to_string(),
            unit,
            offset,
            message: message.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
