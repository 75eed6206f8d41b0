use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("domain mismatch: critic expects {expected} input, got {actual}")]
    DomainMismatch {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("sample count must be at least 1")]
    EmptyBatch,
    #[error("contaminated batch of size {batch_size} at pi={pi} holds no generated sample")]
    ZeroFakeCount { batch_size: usize, pi: f64 },
    #[error("pool holds {available} samples, {required} required")]
    InsufficientPool { available: usize, required: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("detector features are degenerate: {0}")]
    DegenerateFeatures(String),
    #[error("an encoder is required to score with a latent detector")]
    MissingEncoder,
    #[error("training diverged: non-finite losses for {iterations} consecutive iterations (last in phase {phase})")]
    Diverged { iterations: usize, phase: &'static str },
    #[error("contamination rate {requested} unattainable: {reason}")]
    UnattainableContamination { requested: f64, reason: String },
}

pub(crate) fn shape_err(expected: impl core::fmt::Debug, actual: impl core::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: alloc::format!("{expected:?}"),
        actual: alloc::format!("{actual:?}"),
    }
}
