use serde::Serialize;

use super::network::Ffpn;
use super::store::LoadedModel;
use crate::error::ModelError;
use crate::filters::GaussianSpec;
use crate::frame_io::PlanarVideo;
use crate::sampling::{build_input_clip, SamplerConfig};
use crate::seed::rng_for;

/// Predictions are clamped to the strategy range.
pub const PREDICTION_RANGE: (f64, f64) = (-2.0, 3.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// Mean of `per_clip_scores`, clamped to [`PREDICTION_RANGE`].
    pub s_pred: f64,
    /// Unclamped mean.
    pub raw_mean: f64,
    pub per_clip_scores: Vec<f64>,
    pub clip_count: usize,
}

/// Scores `n_clips` clips drawn with seeds derived from `seed` and averages
/// them.
pub fn predict_with_model(
    video: &PlanarVideo,
    model: &Ffpn<f32>,
    sampler: &SamplerConfig,
    mask_spec: &GaussianSpec,
    n_clips: usize,
    seed: u64,
) -> Result<Prediction, ModelError> {
    if n_clips == 0 {
        return Err(ModelError::Invalid("n_clips must be at least 1".into()));
    }
    if sampler.fragment_side() != model.config.input_side || sampler.clip_len() != model.config.clip_len {
        return Err(ModelError::Invalid(format!(
            "sampler yields {} frames at side {}, model expects {} at side {}",
            sampler.clip_len(),
            sampler.fragment_side(),
            model.config.clip_len,
            model.config.input_side
        )));
    }
    let mut per_clip_scores = Vec::with_capacity(n_clips);
    for k in 0..n_clips {
        let mut rng = rng_for(seed, &["predict", &k.to_string()]);
        let clip = build_input_clip(video, sampler, mask_spec, &mut rng)?;
        let score = model.score_clip(&clip)? as f64;
        if !score.is_finite() {
            return Err(ModelError::Invalid(format!("clip {k} produced a non-finite score")));
        }
        per_clip_scores.push(score);
    }
    let raw_mean = per_clip_scores.iter().sum::<f64>() / n_clips as f64;
    Ok(Prediction {
        s_pred: raw_mean.clamp(PREDICTION_RANGE.0, PREDICTION_RANGE.1),
        raw_mean,
        per_clip_scores,
        clip_count: n_clips,
    })
}

pub fn predict_video(
    video: &PlanarVideo,
    loaded: &LoadedModel,
    n_clips: usize,
    seed: u64,
) -> Result<Prediction, ModelError> {
    predict_with_model(video, &loaded.model, &loaded.sampler, &loaded.mask_spec, n_clips, seed)
}
