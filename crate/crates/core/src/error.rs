use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HypeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HypeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("dataset of {size} records exceeds the brute-force limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("{path}: bad magic at byte offset {offset}")]
    BadMagic { path: PathBuf, offset: u64 },

    #[error("{path}: unsupported version {found} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}: checksum mismatch at byte offset {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        path: PathBuf,
        offset: u64,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated {
        path: PathBuf,
        offset: u64,
        needed: u64,
    },

    #[error("{path}: malformed data at byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
}

impl HypeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HypeError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the contents of input data rather than by
    /// how the library was called.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            HypeError::InvalidArgument(_) | HypeError::TooLarge { .. }
        )
    }
}
