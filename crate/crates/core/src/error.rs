use thiserror::Error;

/// Errors raised by network construction, inference and the diagnostics.
#[derive(Debug, Error)]
pub enum PcnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in layer {layer}, unit {unit}")]
    NonFinite { layer: usize, unit: usize },

    #[error("layer {0} is clamped and has no activity gradient")]
    ClampedLayer(usize),

    #[error("layer index {index} out of range for a network of depth {depth}")]
    LayerOutOfRange { index: usize, depth: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("observation stream is empty")]
    EmptyStream,

    #[error("unknown parameter selector `{0}`")]
    UnknownSelector(String),

    #[error(
        "layer {layer} uses a {activation} activation; the closed-form Fisher identities \
         assume linear predictions f(theta * mu) = theta * mu"
    )]
    NonlinearActivation { layer: usize, activation: &'static str },

    #[error("at least {required} samples required, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, PcnError>;
