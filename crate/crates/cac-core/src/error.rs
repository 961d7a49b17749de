use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix has empty null space (full row rank {rank})")]
    EmptyNullSpace { rank: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix not symmetric within tolerance (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("unknown environment `{0}` (valid: car, turtlebot)")]
    UnknownEnv(String),

    #[error("reference generation exhausted {retries} retries (seed {seed})")]
    ReferenceRetries { retries: usize, seed: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}
