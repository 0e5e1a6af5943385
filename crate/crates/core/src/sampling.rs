//! Fixed-size network inputs from arbitrary videos.
//!
//! Temporally the video is cut into `segments` contiguous spans and
//! `frames_per_segment` consecutive frames are drawn at a random start in
//! each span. Spatially every frame is cut into a `grid`×`grid` lattice of
//! cells; one `patch`×`patch` window is drawn inside each cell and the
//! windows are reassembled in lattice order into a square fragment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SampleError;
use crate::filters::{highfreq_mask, GaussianSpec};
use crate::frame_io::{to_grayscale, Frame, PlanarVideo, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub segments: usize,
    pub frames_per_segment: usize,
    pub grid: usize,
    pub patch: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            segments: 16,
            frames_per_segment: 2,
            grid: 16,
            patch: 16,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn clip_len(&self) -> usize {
        self.segments * self.frames_per_segment
    }

    pub fn fragment_side(&self) -> usize {
        self.grid * self.patch
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.segments == 0 || self.frames_per_segment == 0 || self.grid == 0 || self.patch == 0 {
            return Err(SampleError::Config(format!(
                "all sampler counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a clip from its source video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipTrace {
    /// Source frame index of each clip frame.
    pub frame_indices: Vec<usize>,
    /// Top-left `(x, y)` of the window drawn in each cell, row-major over
    /// the lattice. Shared by every frame of the clip.
    pub patch_offsets: Vec<(usize, usize)>,
}

/// Network input: grayscale fragments, their high-frequency masks and the
/// sampling trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleClip {
    pub frames: Vec<Plane>,
    pub hf_masks: Vec<Plane>,
    pub trace: ClipTrace,
}

impl SampleClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn side(&self) -> usize {
        self.frames.first().map_or(0, |p| p.width)
    }
}

/// Segment boundaries `floor(k * n / segments)` for `k = 0..=segments`.
fn segment_bounds(n: usize, segments: usize) -> Vec<usize> {
    (0..=segments).map(|k| k * n / segments).collect()
}

/// Draws `segments × frames_per_segment` strictly increasing frame indices
/// from a `frame_count`-frame video.
pub fn temporal_sample_indices<R: Rng + ?Sized>(
    frame_count: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>, SampleError> {
    cfg.validate()?;
    let need = cfg.clip_len();
    if frame_count < need {
        return Err(SampleError::TooShort {
            have: frame_count,
            need,
        });
    }
    let bounds = segment_bounds(frame_count, cfg.segments);
    let mut out = Vec::with_capacity(need);
    for span in bounds.windows(2) {
        let last_start = span[1] - cfg.frames_per_segment;
        let start = if last_start == span[0] {
            span[0]
        } else {
            rng.gen_range(span[0]..=last_start)
        };
        out.extend(start..start + cfg.frames_per_segment);
    }
    Ok(out)
}

pub fn temporal_sample<R: Rng + ?Sized>(
    video: &PlanarVideo,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>, SampleError> {
    temporal_sample_indices(video.len(), cfg, rng)
}

/// `[start, end)` of lattice cell `i` along an axis of `len` samples. The
/// last cell absorbs the remainder.
fn cell_span(i: usize, grid: usize, len: usize) -> (usize, usize) {
    let cell = len / grid;
    let start = i * cell;
    let end = if i + 1 == grid { len } else { start + cell };
    (start, end)
}

fn check_plane_size(width: usize, height: usize, cfg: &SamplerConfig) -> Result<(), SampleError> {
    let need = cfg.fragment_side();
    if width < need || height < need {
        return Err(SampleError::TooSmall { width, height, need });
    }
    Ok(())
}

/// Draws one window position per lattice cell of a `width`×`height` plane.
pub fn draw_patch_offsets<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, SampleError> {
    cfg.validate()?;
    check_plane_size(width, height, cfg)?;
    let mut offsets = Vec::with_capacity(cfg.grid * cfg.grid);
    for r in 0..cfg.grid {
        let (y0, y1) = cell_span(r, cfg.grid, height);
        for c in 0..cfg.grid {
            let (x0, x1) = cell_span(c, cfg.grid, width);
            let x = pick(rng, x0, x1 - cfg.patch);
            let y = pick(rng, y0, y1 - cfg.patch);
            offsets.push((x, y));
        }
    }
    Ok(offsets)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Reassembles the windows at `offsets` into a `(grid·patch)²` fragment.
pub fn assemble_fragment(
    plane: &Plane,
    offsets: &[(usize, usize)],
    cfg: &SamplerConfig,
) -> Result<Plane, SampleError> {
    check_plane_size(plane.width, plane.height, cfg)?;
    if offsets.len() != cfg.grid * cfg.grid {
        return Err(SampleError::Trace(format!(
            "{} patch offsets for a {}x{} grid",
            offsets.len(),
            cfg.grid,
            cfg.grid
        )));
    }
    let side = cfg.fragment_side();
    let mut out = vec![0f32; side * side];
    for (cell, &(x, y)) in offsets.iter().enumerate() {
        if x + cfg.patch > plane.width || y + cfg.patch > plane.height {
            return Err(SampleError::Trace(format!("offset ({x}, {y}) outside the plane")));
        }
        let (r, c) = (cell / cfg.grid, cell % cfg.grid);
        for dy in 0..cfg.patch {
            let src = &plane.data[(y + dy) * plane.width + x..][..cfg.patch];
            let dst_row = r * cfg.patch + dy;
            out[dst_row * side + c * cfg.patch..][..cfg.patch].copy_from_slice(src);
        }
    }
    Ok(Plane::new(side, side, out))
}

/// Grid-patch fragmentation of a single plane.
pub fn spatial_fragment<R: Rng + ?Sized>(
    plane: &Plane,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Plane, SampleError> {
    let offsets = draw_patch_offsets(plane.width, plane.height, cfg, rng)?;
    assemble_fragment(plane, &offsets, cfg)
}

/// Temporal indices for a possibly short video. Videos shorter than the clip
/// length are padded by repeating their last frame.
fn clip_indices<R: Rng + ?Sized>(
    frame_count: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>, SampleError> {
    if frame_count == 0 {
        return Err(SampleError::TooShort {
            have: 0,
            need: cfg.clip_len(),
        });
    }
    let padded = frame_count.max(cfg.clip_len());
    let idx = temporal_sample_indices(padded, cfg, rng)?;
    Ok(idx.into_iter().map(|i| i.min(frame_count - 1)).collect())
}

/// Draws a clip: temporal indices first, then one set of patch offsets
/// shared by all frames.
pub fn build_input_clip<R: Rng + ?Sized>(
    video: &PlanarVideo,
    cfg: &SamplerConfig,
    mask_spec: &GaussianSpec,
    rng: &mut R,
) -> Result<SampleClip, SampleError> {
    cfg.validate()?;
    mask_spec.validate()?;
    let frame_indices = clip_indices(video.len(), cfg, rng)?;
    let patch_offsets = draw_patch_offsets(video.width, video.height, cfg, rng)?;
    replay_clip(
        video,
        cfg,
        mask_spec,
        &ClipTrace {
            frame_indices,
            patch_offsets,
        },
    )
}

/// Rebuilds the clip described by `trace`.
pub fn replay_clip(
    video: &PlanarVideo,
    cfg: &SamplerConfig,
    mask_spec: &GaussianSpec,
    trace: &ClipTrace,
) -> Result<SampleClip, SampleError> {
    if trace.frame_indices.len() != cfg.clip_len() {
        return Err(SampleError::Trace(format!(
            "{} frame indices, clip length is {}",
            trace.frame_indices.len(),
            cfg.clip_len()
        )));
    }
    let mut frames = Vec::with_capacity(trace.frame_indices.len());
    let mut hf_masks = Vec::with_capacity(trace.frame_indices.len());
    for &i in &trace.frame_indices {
        let src = video
            .frames
            .get(i)
            .ok_or_else(|| SampleError::Trace(format!("frame {i} beyond video length {}", video.len())))?;
        let fragment = assemble_fragment(&to_grayscale(src), &trace.patch_offsets, cfg)?;
        hf_masks.push(highfreq_mask(&Frame::gray(fragment.clone()), mask_spec)?);
        frames.push(fragment);
    }
    Ok(SampleClip {
        frames,
        hf_masks,
        trace: trace.clone(),
    })
}
