//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. Estimator "hard
//! errors" (masked ratio entries, zero self-normalization denominators,
//! support violations) are distinct variants so callers can tell a data
//! problem from a configuration problem.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (ranges, sizes, modes).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An MDP or policy failed its construction invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The evaluation policy puts mass where the behavior policy has none.
    #[error("support violation: {0}")]
    SupportViolation(String),

    /// An estimator touched a ratio entry outside the behavior support.
    /// Masked entries signal a support or estimation inconsistency and are
    /// never silently substituted.
    #[error("masked ratio entry touched at state {state}, action {action}")]
    MaskedRatio { state: usize, action: usize },

    /// A self-normalized estimator hit an all-zero weight column.
    #[error("zero importance-weight denominator at time step {step}")]
    ZeroDenominator { step: usize },

    /// An estimator was invoked without a required input.
    #[error("missing estimator input: {0}")]
    MissingInput(String),

    /// Exhaustive trajectory enumeration would exceed the configured cap.
    #[error("enumeration size exceeds cap of {cap} prefixes")]
    EnumerationTooLarge { cap: usize },

    /// A dense linear solve failed even after regularization.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// Configuration file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// Configuration parsed but failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An estimator failed inside a sweep; carries the full cell context.
    #[error("estimator {family} (n={n}, batch_size={batch_size}, trial={trial}) failed: {source}")]
    Estimator {
        family: String,
        n: usize,
        batch_size: usize,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    /// An I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
