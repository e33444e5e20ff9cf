//! Desk-scale toolkit for word-anchored temporal forgery localization:
//! transcripts are segmented into word tokens, per-token features pass
//! through a low-rank realignment layer and per-modality heads, and forged
//! intervals are localized by scoring word-token proposals.

pub mod checkpoint;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod synth;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use datamodel::{
    Dataset, FeatureMatrix, FeatureStore, ForgerySegment, Label, Modality, PadConfig,
    PadStrategy, TokenFeatures, VideoRecord, WordToken,
};
pub use error::{Error, Result};
pub use eval::{
    average_precision, average_recall_at_n, evaluate, generate_proposals, temporal_iou,
    EvalConfig, EvalCounts, EvalReport, Proposal, VideoProposals,
};
pub use linalg::Mat;
pub use loss::{AcaConfig, HeadLabels, HeadScores, LossKind, LossReport, LossSpec};
pub use model::{LinearHead, ModelBundle, ModelConfig, RealignLayer};
pub use synth::{generate, separation_statistic, ModalityMix, SynthConfig};
pub use trainer::{score_dataset, train, BalancedSampler, TokenRef, TrainConfig, TrainLogEntry};
