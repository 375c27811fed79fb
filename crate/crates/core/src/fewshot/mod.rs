//! Few-shot learning: training episodes, the multi-task SED/FBC model and
//! its losses, prototype prediction, support splitting and both fine-tuning
//! strategies, and per-file inference.

mod corpus;
mod finetune;
mod infer;
mod model;
mod proto;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::features::FeatureError;
use crate::mamba::MambaError;
use crate::nn::NnError;
use crate::postproc::PostprocError;

pub use corpus::{build_episode, CorpusFile, Episode, EpisodeConfig, TrainingCorpus};
pub use finetune::{
    finetune_sed, finetune_sfbc, pos_center, pseudo_labels, split_supports, LogisticConfig, LogisticHead, SedFinetune,
    SfbcConfig, SfbcOutcome, SupportSplit,
};
pub use infer::{file_embeddings, infer_file, InferConfig, Inference, SedScorer, SupportSet};
pub use model::{
    loss_l1, loss_l2, loss_total, train, train_episode, ModelConfig, MultiTaskCache, MultiTaskModel, MultiTaskOutput,
    StepLosses, TrainConfig,
};
pub use proto::{compute_w, predict_query, PrototypeMatrix};

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("episode needs {needed} classes but only {available} have POS events")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {0} has no unmasked frames")]
    EmptyClass(usize),
    #[error("no POS frames in the support set")]
    NoPositive,
    #[error("need at least {needed} POS events, got {got}")]
    TooFewEvents { needed: usize, got: usize },
    #[error("non-finite loss at step {step}: l1 = {l1}, l2 = {l2}")]
    NonFiniteLoss { step: usize, l1: f64, l2: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mamba(#[from] MambaError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
}
