//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by adapter construction, application, training, serving
/// and serialization.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// A metric is mathematically undefined for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// An operation-specific precondition was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    /// A serving call received adapters it cannot route.
    #[error("adapter routing error: {0}")]
    Routing(String),

    /// Two subspace masks claim the same rotation blocks.
    #[error("composition conflict: blocks {blocks:?} claimed by more than one adapter")]
    CompositionConflict { blocks: Vec<usize> },

    /// The timing harness cannot resolve the workload.
    #[error("measurement error: {0}")]
    Measurement(String),

    /// An adapter file failed validation; names the offending field.
    #[error("corrupt adapter file: field `{field}`: {reason}")]
    CorruptFile { field: &'static str, reason: String },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
