//! Error type shared across the crate.

use crate::tensor::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: batch size mismatch ({lhs} vs {rhs})")]
    BatchMismatch {
        op: &'static str,
        lhs: usize,
        rhs: usize,
    },

    #[error("conv2d: non-positive output dimension for input {input} with kernel {kernel}, stride {stride}, padding {padding}")]
    NonPositiveConvOutput {
        input: Shape,
        kernel: usize,
        stride: usize,
        padding: usize,
    },

    #[error("maxpool2: spatial dims of {0} must be even")]
    OddPoolInput(Shape),

    #[error("{op}: expected a vector tensor (h = w = 1), got {shape}")]
    NotAVector { op: &'static str, shape: Shape },

    #[error("grad_check: function output must be a scalar, got {0}")]
    NonScalarOutput(Shape),

    #[error("{context}: data length {got} does not match shape {shape} ({expected} elements)")]
    DataLength {
        context: &'static str,
        shape: Shape,
        expected: usize,
        got: usize,
    },

    #[error("encoder input {shape}: height and width must be divisible by 16")]
    NotDivisibleBy16 { shape: Shape },

    #[error("encoder input {shape}: expected {expected} channels")]
    ChannelCount { shape: Shape, expected: usize },

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("weights file {path}: {msg}")]
    WeightsFormat { path: String, msg: String },

    #[error("weights file {path}: parameter set mismatch: {msg}")]
    WeightsNameMismatch { path: String, msg: String },

    #[error("manifest {path} line {line}: {msg}")]
    Manifest {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("dataset is empty ({context})")]
    EmptyDataset { context: &'static str },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },

    #[error("{op}: input must not be constant")]
    ConstantInput { op: &'static str },

    #[error("{op}: input lengths differ ({lhs} vs {rhs})")]
    LengthMismatch {
        op: &'static str,
        lhs: usize,
        rhs: usize,
    },

    #[error("{op}: need at least {min} values, got {got}")]
    TooFewValues {
        op: &'static str,
        min: usize,
        got: usize,
    },

    #[error("evaluation produced constant predictions over {n} items; rank correlation is undefined")]
    DegenerateEvaluation { n: usize },

    #[error("non-finite gradient for parameter `{param}` at step {step}")]
    NanGradient { param: String, step: u64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
