//! The frequency-attentive feature pyramid network (FFPN).
//!
//! A four-stage plain conv backbone yields features `f_i`. Each stage has a
//! frequency-attention (FA) side branch that pools the high-frequency mask
//! to the stage resolution and emits a per-position scale `γ` and shift `β`,
//! giving `F_i = γ ⊙ f_i + β`. The regression head pools every `F_i`,
//! concatenates, and regresses one score per frame through two fully
//! connected layers. Frame scores are averaged into the clip score.
//!
//! FA outputs feed only the head; the next backbone stage consumes `f_i`.

mod network;
mod predict;
mod store;
mod train;

pub use network::{Attention, Branch, Conv, ForwardCache, Ffpn, Linear, ParamGroup, Stage};
pub use predict::{predict_video, predict_with_model, Prediction, PREDICTION_RANGE};
pub use store::{LoadedModel, TrainMeta};
pub use train::{train, EpochRecord, Plateau, PlateauEvent, StepRecord, TrainEvent, TrainItem, TrainOutcome, TrainSchedule, TrainSpec, VideoRef};

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::nn::ops::conv_out_len;

/// Frames enter the network as `v / 255 - 0.5`.
pub const FRAME_SCALE: f32 = 1.0 / 255.0;
pub const FRAME_SHIFT: f32 = -0.5;
/// Masks enter the network as `m / 32`.
pub const MASK_SCALE: f32 = 1.0 / 32.0;

pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfpnConfig {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub fa_hidden: usize,
    pub head_hidden: usize,
    pub input_side: usize,
    pub clip_len: usize,
}

impl Default for FfpnConfig {
    fn default() -> Self {
        FfpnConfig {
            stage_channels: vec![8, 16, 32, 64],
            stage_strides: vec![2, 2, 2, 2],
            fa_hidden: 16,
            head_hidden: 64,
            input_side: 256,
            clip_len: 32,
        }
    }
}

impl FfpnConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.stage_channels.len() != STAGES {
            return Err(NnError::Config(format!(
                "stage_channels needs {STAGES} entries, got {}",
                self.stage_channels.len()
            )));
        }
        if self.stage_strides.len() != STAGES {
            return Err(NnError::Config(format!(
                "stage_strides needs {STAGES} entries, got {}",
                self.stage_strides.len()
            )));
        }
        if let Some(i) = self.stage_channels.iter().position(|&c| c == 0) {
            return Err(NnError::Config(format!("stage_channels[{i}] must be positive")));
        }
        if let Some(i) = self.stage_strides.iter().position(|&s| s == 0) {
            return Err(NnError::Config(format!("stage_strides[{i}] must be at least 1")));
        }
        for (name, v) in [
            ("fa_hidden", self.fa_hidden),
            ("head_hidden", self.head_hidden),
            ("input_side", self.input_side),
            ("clip_len", self.clip_len),
        ] {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Spatial side of each stage output.
    pub fn feature_sides(&self) -> Vec<usize> {
        let mut side = self.input_side;
        self.stage_strides
            .iter()
            .map(|&s| {
                side = conv_out_len(side, 3, s, 1).unwrap_or(0);
                side
            })
            .collect()
    }

    /// Length of the concatenated pooled feature vector.
    pub fn head_input(&self) -> usize {
        self.stage_channels.iter().sum()
    }
}
