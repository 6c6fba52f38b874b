//! Trainable toy models: conditional denoiser, emotion classifiers, and the
//! contrastive joint embedder, plus their shared checkpoint format.

pub mod checkpoint;
pub mod classifier;
pub mod denoiser;
pub mod embedder;

pub use checkpoint::{CheckpointMeta, ScheduleMeta};
pub use classifier::{
    holdout_accuracy, train_classifier, ClassifierArch, ClassifierTrainConfig, EmotionClassifier,
    SubsetSpec,
};
pub use denoiser::{
    holdout_mse, predict_noise, train_denoiser, Denoiser, DenoiserConfig, DenoiserTrainConfig,
};
pub use embedder::{
    retrieval_rate, train_embedder, EmbedderConfig, EmbedderTrainConfig, JointEmbedder,
    EMBED_TEMPERATURE,
};
