use thiserror::Error;

/// Errors produced anywhere in the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph at node {node}: {reason}")]
    InvalidGraph { node: usize, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: String },

    #[error("selection references node {0}, which is not a trainable layer")]
    MissingLayer(usize),

    #[error("selection index {index} out of bounds for layer {layer} with {len} weights")]
    SelectionOutOfBounds { layer: usize, index: usize, len: usize },

    #[error("network has no eligible (weighted, non-batchnorm) layers")]
    NoEligibleLayers,

    #[error("invalid sampling policy: {0}")]
    InvalidPolicy(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("malformed encoding at character {position}: {message}")]
    InvalidEncoding { position: usize, message: String },

    #[error("unknown search space `{0}`")]
    UnknownSpace(String),

    #[error("space has {count} encodings, above the enumeration cap of {cap}; use sampling instead")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("space offers a single operation per edge; no legal mutation exists")]
    NoLegalMutation,

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("spectrum has {len} eigenvalues; at least 2 are required")]
    SpectrumTooSmall { len: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("accuracy {value} at entry {index} overflows the 2^acc gain (must be < 1023)")]
    GainOverflow { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("score for `{0}` is NaN")]
    NanScore(String),

    #[error("rankings cover different architecture sets")]
    MismatchedArchitectures,

    #[error("unknown proxy `{0}`")]
    UnknownProxy(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate key `{key}` on lines {first} and {second}")]
    DuplicateRow { key: String, first: usize, second: usize },

    #[error("line {line}: value {value} outside [{min}, {max}]")]
    OutOfRange {
        line: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("only {overlap} architectures shared between scores and accuracies (need >= 2)")]
    InsufficientOverlap { overlap: usize },

    #[error("no constraint-satisfying encoding found after {attempts} seeding attempts")]
    SeedingFailed { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
