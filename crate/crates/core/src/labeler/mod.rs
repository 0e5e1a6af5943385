//! Rate-distortion pseudo-labeling.
//!
//! Every video is preprocessed at each strategy `α`, encoded at each
//! constant bitrate, decoded and scored. The points of one strategy form an
//! RD curve over measured bitrate; the label is the strategy whose curve is
//! highest at the target bitrate.

mod curve;
mod exec;
mod pipeline;
mod quality;

pub use curve::{quality_at_bitrate, select_optimal, RDCurve, RDPoint, StrategyLabel};
pub use exec::{run_command, Template};
pub use pipeline::{
    measured_kbps, pseudo_label_dataset, read_audit, CommandEncoder, EncodeRequest, EncodeResult, Encoder,
    JobCounters, LabelReport, Labeler, Source, VideoFailure, VideoLabel, AUDIT_HEADER, LABELS_HEADER,
};
pub use quality::{
    builtin_proxy, measure_quality, sample_indices_1fps, write_frame_png, FrameMetric, FrameQuality,
    QualityMeter,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::LabelError;

pub const DEFAULT_ENCODER_CMD: &str = "ffmpeg -y -loglevel error -i {input} -c:v libx265 -b:v {bitrate_kbps}k \
     -x265-params \"vbv-maxrate={bitrate_kbps}:vbv-bufsize={bitrate_kbps}:log-level=error\" {output}";
pub const DEFAULT_DECODE_CMD: &str =
    "ffmpeg -y -loglevel error -i {input} -f yuv4mpegpipe -pix_fmt yuv420p {output_y4m}";
/// Selects the in-process proxy instead of an external metric command.
pub const BUILTIN_METRIC: &str = "builtin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelJobSpec {
    pub strategies: Vec<f64>,
    pub bitrates_kbps: Vec<f64>,
    pub target_kbps: f64,
    /// Placeholders `{input}`, `{output}`, `{bitrate_kbps}`; `{alpha}` optional.
    pub encoder_cmd: String,
    /// Placeholders `{input}`, `{output_y4m}`. Empty means the encoder output is itself y4m.
    pub decode_cmd: String,
    /// `builtin`, or a template with `{image}` that prints one number.
    pub metric_cmd: String,
    /// Extension of encoded files; container selection for the encoder.
    pub output_ext: String,
    pub workdir: PathBuf,
    pub cache: bool,
    pub timeout_secs: u64,
    /// Subprocess pool width; set from the run-level worker count.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for LabelJobSpec {
    fn default() -> Self {
        LabelJobSpec {
            strategies: default_strategies(),
            bitrates_kbps: vec![1000.0, 2000.0, 3000.0, 4000.0],
            target_kbps: 2000.0,
            encoder_cmd: DEFAULT_ENCODER_CMD.to_string(),
            decode_cmd: DEFAULT_DECODE_CMD.to_string(),
            metric_cmd: BUILTIN_METRIC.to_string(),
            output_ext: "mp4".to_string(),
            workdir: PathBuf::from("hfprep-work"),
            cache: true,
            timeout_secs: 600,
            workers: 4,
        }
    }
}

/// −2.0 to 3.0 in steps of 0.5.
pub fn default_strategies() -> Vec<f64> {
    (0..11).map(|i| -2.0 + 0.5 * i as f64).collect()
}

impl LabelJobSpec {
    /// Checks the spec; the error names the offending field.
    pub fn validate(&self) -> Result<(), LabelError> {
        let bad = |m: String| Err(LabelError::Spec(m));
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.strategies.iter().any(|a| !a.is_finite()) {
            return bad("strategies must be finite".into());
        }
        if self.strategies.windows(2).any(|w| w[0] >= w[1]) {
            return bad("strategies must be strictly increasing".into());
        }
        if !self.strategies.contains(&0.0) {
            return bad("strategies must contain 0.0".into());
        }
        if self.bitrates_kbps.len() < 2 {
            return bad(format!("bitrates_kbps needs at least 2 values, got {}", self.bitrates_kbps.len()));
        }
        if self.bitrates_kbps.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("bitrates_kbps must be positive and finite".into());
        }
        let lo = self.bitrates_kbps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.bitrates_kbps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(self.target_kbps >= lo && self.target_kbps <= hi) {
            return bad(format!("target_kbps {} outside bitrate range [{lo}, {hi}]", self.target_kbps));
        }
        if self.output_ext.is_empty() || self.output_ext.contains(['/', '.']) {
            return bad(format!("output_ext `{}` must be a bare extension", self.output_ext));
        }
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        Template::parse(&self.encoder_cmd, &["input", "output", "bitrate_kbps"])
            .map_err(|e| LabelError::Spec(format!("encoder_cmd: {e}")))?;
        if !self.decode_cmd.is_empty() {
            Template::parse(&self.decode_cmd, &["input", "output_y4m"]).map_err(|e| LabelError::Spec(format!("decode_cmd: {e}")))?;
        }
        if self.metric_cmd != BUILTIN_METRIC {
            Template::parse(&self.metric_cmd, &["image"]).map_err(|e| LabelError::Spec(format!("metric_cmd: {e}")))?;
        }
        Ok(())
    }

    /// Encode jobs scheduled per video.
    pub fn jobs_per_video(&self) -> usize {
        self.strategies.len() * self.bitrates_kbps.len()
    }
}
