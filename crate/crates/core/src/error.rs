use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or field failed validation. Carries the field name.
    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },

    /// Array shapes or channel contracts do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// File does not start with the expected magic bytes.
    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    /// File is shorter than its header declares.
    #[error("truncated file: expected {expected} bytes, got {got}")]
    Truncated { expected: u64, got: u64 },

    /// Declared dimensions would overflow the addressable payload size.
    #[error("dimension overflow: {0}")]
    DimOverflow(String),

    /// Unsupported format version.
    #[error("version mismatch: supported {supported}, found {found}")]
    VersionMismatch { supported: u32, found: u32 },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iteration {iteration}: {value}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    /// A required input (dataset, checkpoint, slice source) is unavailable.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            field,
            message: message.into(),
        }
    }

    pub fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
