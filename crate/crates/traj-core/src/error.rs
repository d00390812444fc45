//! Error type shared across the trajectory crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("trajectory has {got} points, need at least {need}")]
    TooShort { need: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("expected {expected} steps for {kind} trajectory, got {got}")]
    WrongStepCount {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("heading not unwrapped: jump of {jump:.6} rad at index {index}")]
    HeadingJump { index: usize, jump: f64 },

    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotoneTimestamps { index: usize },

    #[error("record spans {got:.3} s, need at least {need:.3} s")]
    InsufficientCoverage { need: f64, got: f64 },

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed corpus file {path}, line {line}: {msg}")]
    MalformedCorpus {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
}

pub type Result<T> = std::result::Result<T, TrajError>;
