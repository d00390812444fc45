use thiserror::Error;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("non-positive resolution component at {index}: {value}")]
    BadResolution { index: usize, value: f64 },

    #[error("k-means needs a non-empty point set")]
    EmptyPoints,

    #[error("k-means needs k >= 1, got {0}")]
    BadK(usize),

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),

    #[error("top-k needs k >= 1, got {0}")]
    BadTopK(usize),

    #[error("query history length {query} does not match dictionary entries ({entries})")]
    QueryLengthMismatch { query: usize, entries: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("dictionary format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("dictionary checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed dictionary file, line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error(transparent)]
    Traj(#[from] traj_core::TrajError),
}

pub type Result<T> = std::result::Result<T, DictError>;
