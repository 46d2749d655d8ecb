//! Micro learned detector: network, focal loss, training and inference.
//!
//! All arithmetic is `f64`. Gradients are computed by hand-written backward
//! passes, checked against finite differences in [`gradcheck`].

pub mod gradcheck;
mod infer;
pub mod loss;
mod model;
pub mod ops;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use infer::{infer, logits_to_grid, Inference, CONFIDENCE_THRESHOLD};
pub use loss::{focal_loss, focal_term};
pub use model::{
    build_network, parameter_count_formula, FrameFeatures, Network, ParamKind, Tensor, WindowTrace, HAT_GAIN, HEAD_PRIOR,
    TEMPORAL_PREFIX,
};
pub use train::{kernel_norm, train, Adam, EpochRecord, History, Mirror, Prepared};

use crate::cube::CubeError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid training config: {field}: {reason}")]
    InvalidTrainConfig { field: &'static str, reason: String },
    #[error("window has {actual} frames, expected {expected}")]
    WindowLength { expected: usize, actual: usize },
    #[error("frame geometry does not match the network")]
    GeometryMismatch,
    #[error("length mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub backbone_blocks: usize,
    pub base_channels: usize,
    pub temporal_layers: usize,
    pub temporal_window: usize,
    pub groupnorm_groups: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { backbone_blocks: 2, base_channels: 8, temporal_layers: 0, temporal_window: 3, groupnorm_groups: 4, seed: 0 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |field, reason: &str| Err(NetError::InvalidConfig { field, reason: reason.into() });
        if self.backbone_blocks == 0 {
            return bad("backbone_blocks", "must be at least 1");
        }
        if self.base_channels == 0 {
            return bad("base_channels", "must be at least 1");
        }
        if !self.temporal_layers.is_multiple_of(2) || self.temporal_layers > 6 {
            return bad("temporal_layers", "must be one of 0, 2, 4, 6");
        }
        if self.temporal_window.is_multiple_of(2) {
            return bad("temporal_window", "must be odd");
        }
        if self.groupnorm_groups == 0 || !self.base_channels.is_multiple_of(self.groupnorm_groups) {
            return bad("groupnorm_groups", "must divide base_channels");
        }
        Ok(())
    }

    /// Residual blocks at full and at half resolution.
    pub fn block_split(&self) -> (usize, usize) {
        (self.backbone_blocks.div_ceil(2), self.backbone_blocks / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub micro_batch: usize,
    pub effective_batch: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Randomly reverse azimuth and elevation of each training sample.
    pub mirror_augmentation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            gamma: 2.0,
            l1_coeff: 1e-5,
            l2_coeff: 1e-4,
            micro_batch: 4,
            effective_batch: 8,
            learning_rate: 3e-3,
            lr_decay: 0.95,
            epochs: 30,
            seed: 0,
            mirror_augmentation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |field, reason: &str| Err(NetError::InvalidTrainConfig { field, reason: reason.into() });
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1]");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be non-negative");
        }
        if !(self.l1_coeff >= 0.0 && self.l1_coeff.is_finite()) {
            return bad("l1_coeff", "must be non-negative");
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad("l2_coeff", "must be non-negative");
        }
        if self.micro_batch == 0 {
            return bad("micro_batch", "must be at least 1");
        }
        if self.effective_batch == 0 || !self.effective_batch.is_multiple_of(self.micro_batch) {
            return bad("effective_batch", "must be a positive multiple of micro_batch");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad("lr_decay", "must be positive");
        }
        Ok(())
    }
}
