use thiserror::Error;

/// Errors produced anywhere in the link simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("steady state did not converge at I = {current_a:e} A (relative residual {residual:e} after {iterations} iterations)")]
    SteadyStateNotConverged {
        current_a: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("rate-equation solver diverged at step {step}: {reason}")]
    SolverDiverged { step: usize, reason: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient least-squares problem: {0}")]
    RankDeficient(String),

    #[error("non-finite value in {stage}")]
    NonFinite { stage: String },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
