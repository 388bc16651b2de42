//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two containers that must agree in length do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A NaN or infinity appeared where only finite values are valid.
    #[error("non-finite value in {context} (index {index})")]
    NonFinite { context: &'static str, index: usize },

    /// A caller-supplied value is out of range or malformed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A config file failed schema or range validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two pieces of consolidation state that must describe the same
    /// task history do not.
    #[error("inconsistent state: {0}")]
    InconsistentState(String),

    /// A curvature probe was requested away from a stationary point.
    #[error("not at an optimum: gradient inf-norm {grad_norm:.3e} exceeds tolerance {tol:.3e}")]
    NotAtOptimum { grad_norm: f64, tol: f64 },

    /// The training loss left the representable range.
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    /// A task id was not found in the state it was looked up in.
    #[error("unknown task id {0:?}")]
    UnknownTask(String),

    /// The operation is not defined for the strategy it was called under.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}
