use std::path::Path;
use std::time::Duration;

use image::{GrayImage, RgbImage};

use super::exec::{run_command, Template};
use super::{LabelJobSpec, BUILTIN_METRIC};
use crate::error::LabelError;
use crate::filters::{highpass_residual, GaussianSpec};
use crate::frame_io::{load_y4m, quantize_sample, to_grayscale, Frame, PixLayout, PlanarVideo, Plane};

/// Block size probed by the builtin proxy's blockiness term.
const BLOCK: usize = 8;

/// Frame indices `⌊k·fps⌋`, `k = 0, 1, ...`, one per second of video.
pub fn sample_indices_1fps(n_frames: usize, fps: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if !(fps.is_finite() && fps > 0.0) {
        return out;
    }
    for k in 0.. {
        let i = (k as f64 * fps).floor() as usize;
        if i >= n_frames {
            break;
        }
        if out.last() != Some(&i) {
            out.push(i);
        }
    }
    out
}

fn mean_abs_steps(p: &Plane, on_boundary: bool) -> Option<f64> {
    let (w, h) = (p.width, p.height);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 1..w {
            if (x % BLOCK == 0) == on_boundary {
                sum += (p.get(x, y) as f64 - p.get(x - 1, y) as f64).abs();
                n += 1;
            }
        }
    }
    for y in 1..h {
        for x in 0..w {
            if (y % BLOCK == 0) == on_boundary {
                sum += (p.get(x, y) as f64 - p.get(x, y - 1) as f64).abs();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Hermetic quality proxy for one frame. NOT CLIP-IQA: it rewards
/// high-frequency energy and penalizes 8×8 block edges.
///
/// `rms(Y − lowpass(Y)) / 255 − max(0, d_edge − d_inner) / 255`, where
/// `d_edge` and `d_inner` are the mean absolute neighbour differences across
/// and away from block boundaries.
pub fn builtin_proxy(frame: &Frame) -> Result<f64, LabelError> {
    let y = to_grayscale(frame);
    let hf = highpass_residual(&y, &GaussianSpec::default())?;
    let energy = (hf.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / hf.data.len() as f64).sqrt();
    let block = match (mean_abs_steps(&y, true), mean_abs_steps(&y, false)) {
        (Some(edge), Some(inner)) => (edge - inner).max(0.0),
        _ => 0.0,
    };
    Ok((energy - block) / 255.0)
}

/// Writes a frame as 8-bit PNG: gray stays single-channel, YUV is converted
/// with full-range BT.601 and nearest-neighbour chroma.
pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<(), LabelError> {
    let (w, h) = (frame.width(), frame.height());
    let io = |e: image::ImageError| LabelError::Other(format!("{}: {e}", path.display()));
    match frame.layout {
        PixLayout::Gray => {
            let buf: Vec<u8> = frame.planes[0].data.iter().map(|&v| quantize_sample(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("plane size matches frame")
                .save(path)
                .map_err(io)
        }
        PixLayout::Rgb | PixLayout::Yuv420 | PixLayout::Yuv444 => {
            let mut buf = Vec::with_capacity(w * h * 3);
            let sub = if frame.layout == PixLayout::Yuv420 { 2 } else { 1 };
            for y in 0..h {
                for x in 0..w {
                    let a = frame.planes[0].get(x, y);
                    let b = frame.planes[1].get(x / sub, y / sub);
                    let c = frame.planes[2].get(x / sub, y / sub);
                    let rgb = if frame.layout == PixLayout::Rgb {
                        [a, b, c]
                    } else {
                        let (u, v) = (b - 128.0, c - 128.0);
                        [a + 1.402 * v, a - 0.344_136 * u - 0.714_136 * v, a + 1.772 * u]
                    };
                    buf.extend(rgb.map(quantize_sample));
                }
            }
            RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("plane size matches frame")
                .save(path)
                .map_err(io)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameMetric {
    Builtin,
    /// Reads `{image}`, prints one number.
    Command(Template),
}

impl FrameMetric {
    pub fn from_spec(metric_cmd: &str) -> Result<Self, LabelError> {
        if metric_cmd == BUILTIN_METRIC {
            Ok(FrameMetric::Builtin)
        } else {
            Ok(FrameMetric::Command(Template::parse(metric_cmd, &["image"])?))
        }
    }

    fn identity(&self) -> String {
        match self {
            FrameMetric::Builtin => BUILTIN_METRIC.to_string(),
            FrameMetric::Command(t) => t.source().to_string(),
        }
    }

    fn score(&self, frame: &Frame, scratch: &Path, index: usize, timeout: Duration) -> Result<f64, LabelError> {
        match self {
            FrameMetric::Builtin => builtin_proxy(frame),
            FrameMetric::Command(t) => {
                let image = scratch.join(format!("frame{index:06}.png"));
                write_frame_png(frame, &image)?;
                let out = run_command(&t.render(&[("image", &image.to_string_lossy())]), timeout)?;
                let _ = std::fs::remove_file(&image);
                let text = out.trim();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(LabelError::NonNumericMetric(text.to_string())),
                }
            }
        }
    }
}

/// Mean metric score over the frames sampled at one per second.
pub fn measure_quality(
    video: &PlanarVideo,
    metric: &FrameMetric,
    scratch: &Path,
    timeout: Duration,
) -> Result<f64, LabelError> {
    let idx = sample_indices_1fps(video.len(), video.fps());
    if idx.is_empty() {
        return Err(LabelError::Other("decoded video has no frames".into()));
    }
    let mut sum = 0.0;
    for &i in &idx {
        sum += metric.score(&video.frames[i], scratch, i, timeout)?;
    }
    Ok(sum / idx.len() as f64)
}

/// Scores an encoded file.
pub trait QualityMeter: Send + Sync {
    /// Stable description; part of the quality cache key.
    fn identity(&self) -> String;

    /// `scratch` is an empty directory owned by the call.
    fn measure(&self, encoded: &Path, scratch: &Path) -> Result<f64, LabelError>;
}

/// Decode command (or none for y4m encoder output) followed by a per-frame metric.
#[derive(Debug, Clone)]
pub struct FrameQuality {
    pub decode: Option<Template>,
    pub metric: FrameMetric,
    pub timeout: Duration,
}

impl FrameQuality {
    pub fn from_spec(spec: &LabelJobSpec) -> Result<Self, LabelError> {
        Ok(FrameQuality {
            decode: match spec.decode_cmd.as_str() {
                "" => None,
                d => Some(Template::parse(d, &["input", "output_y4m"])?),
            },
            metric: FrameMetric::from_spec(&spec.metric_cmd)?,
            timeout: Duration::from_secs(spec.timeout_secs),
        })
    }
}

impl QualityMeter for FrameQuality {
    fn identity(&self) -> String {
        let decode = self.decode.as_ref().map(|t| t.source()).unwrap_or("none");
        format!("decode={decode}\nmetric={}", self.metric.identity())
    }

    fn measure(&self, encoded: &Path, scratch: &Path) -> Result<f64, LabelError> {
        let video = match &self.decode {
            None => load_y4m(encoded)?,
            Some(t) => {
                let out = scratch.join("decoded.y4m");
                run_command(
                    &t.render(&[("input", &encoded.to_string_lossy()), ("output_y4m", &out.to_string_lossy())]),
                    self.timeout,
                )?;
                let v = load_y4m(&out)?;
                let _ = std::fs::remove_file(&out);
                v
            }
        };
        measure_quality(&video, &self.metric, scratch, self.timeout)
    }
}
