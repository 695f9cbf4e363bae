use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, sampling, and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Basis size must allow at least one interior breakpoint layout.
    #[error("spline basis needs at least 2 functions, got {0}")]
    BasisTooSmall(usize),

    /// Index outside the valid range of a container.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Evaluation point outside the unit interval.
    #[error("point {0} lies outside [0, 1]")]
    OutsideUnitInterval(f64),

    /// Mixture weights must be a probability vector.
    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),

    /// Dimensions of interacting objects disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A quantity that must be finite was not.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A precondition on an argument failed.
    #[error("{0}")]
    InvalidArgument(String),

    /// Dataset contains only treated or only control subjects.
    #[error("dataset has no {missing} subjects; both treatment arms are required")]
    SingleArm { missing: &'static str },

    /// No valid initial state found for a Markov chain.
    #[error("failed to initialize chain after {attempts} attempts")]
    ChainInit { attempts: usize },

    /// Propensity values must lie strictly inside (0, 1).
    #[error("propensity value {0} outside (0, 1)")]
    PropensityOutOfRange(f64),

    /// Malformed input record, with its 1-based line number.
    #[error("{path}:{line}: {message}")]
    ParseRecord {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
