use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid structural causal model: {0}")]
    InvalidScm(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown case study `{0}`")]
    UnknownId(String),
    #[error("importance weights degenerate (effective sample size {ess:.3})")]
    DegenerateWeights { ess: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("{rows} rows exceed the model limit of {max}")]
    TooManyRows { rows: usize, max: usize },
    #[error("{features} features exceed the model limit of {max}")]
    TooManyFeatures { features: usize, max: usize },
    #[error("target range is degenerate (max(y) == min(y))")]
    DegenerateRange,
    #[error("empty context")]
    EmptyContext,
    #[error("{0}")]
    Invalid(String),
}
