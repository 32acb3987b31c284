use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tensor shape {shape:?} holds {expected} elements but {found} values were given")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("tensor extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("node {node} ({op}): {detail}")]
    NodeShape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("graph input `{0}` is not bound")]
    Unbound(String),
    #[error("expected {expected} bound inputs, got {found}")]
    InputCount { expected: usize, found: usize },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("graph has no loss node")]
    NoLoss,
    #[error("node id {0} does not exist in this graph")]
    UnknownNode(usize),
    #[error("backward called before a successful forward pass")]
    BackwardBeforeForward,

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("function value is not finite at coordinate {coordinate}")]
    NonFiniteValue { coordinate: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("network spec has no layers")]
    EmptyNetwork,
    #[error("layer {index} ({kind}) cannot follow {previous}: input shape {shape:?}, {detail}")]
    LayerShape {
        index: usize,
        kind: &'static str,
        previous: String,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("parameter payload holds {found} values, network needs {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {inputs} inputs but {labels} labels")]
    DatasetMismatch { inputs: usize, labels: usize },
    #[error("sample {index} does not match the network: {detail}")]
    SampleShape { index: usize, detail: String },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("level set provides {levels} levels but {units} units need one")]
    LevelCount { levels: usize, units: usize },
    #[error("invalid quantization level `{id}`: {detail}")]
    InvalidLevel { id: String, detail: String },
    #[error("profile is missing {stat} for layer {layer}")]
    MissingStatistic { stat: &'static str, layer: usize },
    #[error("converting `{coarse}` into `{fine}` is not lossless")]
    LossyUpconvert { coarse: String, fine: String },
    #[error("{count} distinct assignments exceed the brute-force limit of {limit}; use the gradient planner")]
    SearchSpace { count: u128, limit: u128 },
    #[error("plan covers {plan} layers but the network has {network}")]
    PlanMismatch { plan: usize, network: usize },
    #[error("plan does not consume the level multiset exactly: {0}")]
    NotABijection(String),

    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("value {value} at index {index} saturates a 32-bit integer grid of step {scale}")]
    Saturation { index: usize, value: f64, scale: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
