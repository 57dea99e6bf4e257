use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    /// The network description or an input does not fit a layer.
    #[error("layer {layer} ({op}): {reason}")]
    Structural {
        layer: usize,
        op: &'static str,
        reason: String,
    },

    /// Tensor or buffer shapes do not agree outside of a layer context.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API was called in the wrong order (e.g. backward without a train-mode forward).
    #[error("usage error: {0}")]
    Usage(String),

    /// The loss could not be evaluated for this batch.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),
}
