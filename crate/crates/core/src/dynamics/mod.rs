//! Dynamics features and demonstration selection.
//!
//! A demonstration is embedded as the predicted final-frame visual feature
//! concatenated with a language feature; seen demonstrations are ranked
//! against the query by cosine similarity.

mod featfile;
mod features;
mod predictor;
mod select;

use thiserror::Error;

pub use featfile::{decode_features, encode_features, export_features, import_features, MAGIC, VERSION};
pub use features::{
    baseline_vis_feature, dynamics_feature, embed_dataset, lang_feature, pool_image, DynamicsFeature,
    FeatureInput, FeatureMode, FeatureTable, observed_features, D_LANG, D_VIS, OBSERVED_SOURCE, POOL_GRID,
};
pub use predictor::{
    constant_mean_loss, samples_from_observed, train, train_dynamics_predictor, DynamicsPredictor, TrainConfig, TrainingSample,
};
pub use select::{cosine_similarity, select_random, select_top_k, SelectionResult};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("K = {k} outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },
    #[error("feature mode {0} needs a trained dynamics predictor")]
    PredictorRequired(FeatureMode),
    #[error("unknown feature mode `{0}`")]
    UnknownMode(String),
    #[error("non-finite component in feature `{0}`")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("feature file truncated at byte {offset}: expected {expected}")]
    Truncated { offset: usize, expected: String },
    #[error("bad feature file at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}
