use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty")]
    Empty,
    #[error("invalid concentration")]
    InvalidConcentration,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("prior mean variance undefined")]
    PriorMeanVarianceUndefined,
    #[error("degenerate variance")]
    DegenerateVariance,
    #[error("exhausted stick")]
    ExhaustedStick,
    #[error("context {context} out of range (C = {contexts})")]
    ContextOutOfRange { context: usize, contexts: usize },
    #[error("character {0:?} outside alphabet")]
    OutsideAlphabet(char),
    #[error("packing failed")]
    PackingFailed,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("both classes must be present")]
    SingleClass,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
