//! Window classifier: a dual-input 2D CNN with a learnable speaking-context
//! embedding, its gradient-descent trainer, and the model file format.

mod io;
pub mod layers;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::RobustScaler;
use crate::spectral::SpectralParams;
use crate::windowing::WindowParams;

pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION};
pub use network::{
    ArchConfig, BatchStats, ConvStage, Dropout, ForwardTrace, Network, ParamLayout, SampleView, Waypoint, EMBED_DIM, N_CONTEXTS,
};
pub use train::{class_weights, predict_windows, train, train_with_progress, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("context code {0} out of range")]
    ContextCode(u8),
    #[error("non-finite activation at {0}")]
    NonFinite(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub validation_accuracy: Option<f64>,
    pub config_hash: String,
    pub train: TrainConfig,
    pub window: WindowParams,
    pub spectral: SpectralParams,
}

/// Everything needed to reproduce inference: weights, architecture and the
/// frozen magnitude scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub weights: Vec<f32>,
    pub scaler: RobustScaler,
    pub meta: ModelMeta,
}

impl ModelParams {
    pub fn network(&self) -> Result<Network<f32>, ModelError> {
        Network::from_params(self.arch.clone(), self.weights.clone())
    }
}
