use thiserror::Error;

/// Errors produced by the transport solvers and their gradient passes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input vector")]
    EmptyVector,

    #[error("empty input matrix")]
    EmptyMatrix,

    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("non-finite entry at index {index}")]
    NonFiniteEntry { index: usize },

    #[error("histogram sums to {sum}, expected 1 (pass renormalize to rescale)")]
    NotNormalized { sum: f64 },

    #[error("zero entry at index {index} is not allowed in log mode (enable clamping)")]
    ZeroEntryInLogMode { index: usize },

    #[error(
        "histogram entry at index {index} must be strictly positive for log-domain iterations"
    )]
    NonPositiveHistogram { index: usize },

    #[error("regularization epsilon must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("dimension mismatch: expected {expected:?}, got {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("batch column counts differ: {left} vs {right}")]
    ColumnCountMismatch { left: usize, right: usize },

    #[error(
        "non-finite value in {stage} at iteration {iteration}; the multiplicative iteration \
         over/underflowed, retry in log mode"
    )]
    NumericOverflow {
        stage: &'static str,
        iteration: usize,
    },

    #[error(
        "kernel {axis} {index} is identically zero (cost/epsilon underflows exp); use log mode"
    )]
    KernelDegenerate { axis: &'static str, index: usize },

    #[error("trace holds {found} iterations, backward pass needs at least {needed}")]
    TraceTooShort { needed: usize, found: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: expected {expected} elements, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("batch size {batch} exceeds the number of documents {documents}")]
    BatchLargerThanData { batch: usize, documents: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

impl Error {
    /// True for failures caused by floating-point range problems rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericOverflow { .. } | Error::KernelDegenerate { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
