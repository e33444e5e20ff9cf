use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the data model, the model math, and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval [{t_s}, {t_e}): start must be finite and strictly before end")]
    InvalidInterval { t_s: f64, t_e: f64 },

    #[error("tokens [{:?}) and [{:?}) overlap with positive measure", first, second)]
    OverlappingTokens { first: (f64, f64), second: (f64, f64) },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing features: {0}")]
    MissingFeatures(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("rank {rank} out of range (must be in 1..={max})")]
    InvalidRank { rank: usize, max: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },

    #[error("backward called without a preceding training-mode forward")]
    StaleMask,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("video {video}: {tokens} tokens but {scores} scores")]
    ScoreCountMismatch { video: String, tokens: usize, scores: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
