use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A non-finite value appeared inside a solver. `context` carries the
    /// parameter snapshot at the time of failure.
    #[error("numerical failure in {stage} at iteration {iteration}: {context}")]
    NumericalFailure {
        stage: &'static str,
        iteration: usize,
        context: String,
    },

    /// The plan has a zero row marginal, so the conditional distribution of
    /// samples given that feature dimension is undefined.
    #[error("degenerate plan: row {row} has zero marginal mass")]
    DegeneratePlan { row: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn is_numerical_failure(&self) -> bool {
        matches!(self, Error::NumericalFailure { .. })
    }
}
