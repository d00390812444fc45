use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("loss node must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("malformed checkpoint, line {line}: {msg}")]
    MalformedCheckpoint { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(op: &'static str, details: String) -> NnError {
    NnError::ShapeMismatch { op, details }
}
