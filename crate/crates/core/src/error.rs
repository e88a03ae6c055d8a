use thiserror::Error;

/// Errors produced by the library.
///
/// Invariant violations of a datum (non-surjective maps, a nontrivial common
/// kernel, ...) are not errors: they are collected into a
/// [`ValidationReport`](crate::datum::ValidationReport). Errors are reserved
/// for malformed input and for operations whose preconditions do not hold.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrices or vectors have inconsistent shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric input is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A parameter lies outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The datum fails validation and the operation requires a valid datum.
    #[error("invalid datum: {0}")]
    InvalidDatum(String),

    /// A Gaussian input block is not symmetric positive definite.
    #[error("input block {index} is not symmetric positive definite")]
    NotPositiveDefinite { index: usize },

    /// `L_j (M+G)^-1 L_j^T` lost rank during a fixed-point update.
    #[error("fixed-point update for block {index} is singular (blow-up direction)")]
    BlowUp { index: usize },

    /// Global mode requires the scaling condition.
    #[error(
        "global mode requires the scaling condition sum p_j n_j = n (slack {slack:.3e}); \
         otherwise the supremum is 0 or infinite by rescaling A -> tA"
    )]
    ScalingViolated { slack: f64 },

    /// The optimiser exhausted its iteration budget without classifying the run.
    #[error("undetermined after {iterations} iterations: {reason}")]
    Undetermined {
        iterations: usize,
        reason: String,
        trace: Vec<crate::gauss::TraceEntry>,
    },

    /// Enumeration would exceed the combinatorial guard.
    #[error("combinatorial guard exceeded: {0}")]
    GuardExceeded(String),

    /// Rejection sampling failed to produce an admissible sample.
    #[error("rejection sampling failed: {0}")]
    Sampling(String),

    /// A composed map left the sampling box of an input function.
    #[error("point {point:?} escapes the sampling box of input function {index}; enlarge the box")]
    OutOfBox { index: usize, point: Vec<f64> },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
