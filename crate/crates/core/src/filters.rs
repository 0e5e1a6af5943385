//! Gaussian low-pass, signed unsharp masking and high-frequency masks.
//!
//! Unsharp masking adds a scaled high-frequency residual back onto the
//! input: `alpha * (x - lowpass(x)) + x`. Positive `alpha` sharpens,
//! negative `alpha` smooths, zero passes the input through unchanged.

use serde::{Deserialize, Serialize};

use crate::error::FilterError;
use crate::frame_io::{to_grayscale, Frame, PlanarVideo, Plane};

/// Lower and upper bound of the preprocessing strength.
pub const ALPHA_MIN: f64 = -2.0;
pub const ALPHA_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Mirror including the edge sample: `c b a | a b c`.
    Reflect,
    /// Periodic extension.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub ksize: usize,
    pub boundary: Boundary,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            sigma: 1.0,
            ksize: 5,
            boundary: Boundary::Reflect,
        }
    }
}

impl GaussianSpec {
    pub fn new(sigma: f64, ksize: usize, boundary: Boundary) -> Result<Self, FilterError> {
        let spec = GaussianSpec {
            sigma,
            ksize,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.ksize < 3 || self.ksize.is_multiple_of(2) {
            return Err(FilterError::EvenOrSmallKernel(self.ksize));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(FilterError::BadSigma(self.sigma));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.ksize / 2
    }

    /// Normalized 1D taps, index 0 is offset `-radius`. Accumulated in f64
    /// and renormalized after truncation.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius() as i64;
        let two_s2 = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / two_s2).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / sum).collect()
    }

    /// Taps in `f32`, as used by [`gaussian_lowpass`].
    pub fn kernel_f32(&self) -> Vec<f32> {
        self.kernel().into_iter().map(|w| w as f32).collect()
    }

    /// Real transfer function of the 1D filter at `f` cycles per sample.
    ///
    /// The filter is evaluated as `x[i] + sum_{k != 0} w_k (x[i+k] - x[i])`,
    /// so its effective center weight is `1 - sum_{k != 0} w_k`.
    pub fn transfer_1d(&self, f: f64) -> f64 {
        let r = self.radius() as i64;
        let taps = self.kernel_f32();
        let mut response = 1.0;
        for (&w, k) in taps.iter().zip(-r..=r) {
            if k != 0 {
                response += w as f64 * ((2.0 * std::f64::consts::PI * f * k as f64).cos() - 1.0);
            }
        }
        response
    }
}

#[inline]
fn boundary_index(i: isize, n: usize, boundary: Boundary) -> usize {
    let n_i = n as isize;
    match boundary {
        Boundary::Wrap => i.rem_euclid(n_i) as usize,
        Boundary::Reflect => {
            // Period 2n mirror with edge repeat.
            let m = i.rem_euclid(2 * n_i);
            if m < n_i {
                m as usize
            } else {
                (2 * n_i - 1 - m) as usize
            }
        }
    }
}

/// Separable Gaussian blur: horizontal pass then vertical pass, each output
/// sample summed over taps in ascending offset order.
///
/// Constant planes come back bit-identical.
pub fn gaussian_lowpass(x: &Plane, spec: &GaussianSpec) -> Result<Plane, FilterError> {
    spec.validate()?;
    if x.is_empty() {
        return Err(FilterError::EmptyPlane);
    }
    if spec.ksize > 2 * x.width.min(x.height) + 1 {
        return Err(FilterError::KernelTooLarge {
            ksize: spec.ksize,
            width: x.width,
            height: x.height,
        });
    }
    let taps = spec.kernel_f32();
    let r = spec.radius() as isize;
    let (w, h) = (x.width, x.height);
    // Off-center taps as (offset, weight); accumulation is relative to the
    // center sample so constants pass through exactly.
    let side: Vec<(isize, f32)> = taps
        .iter()
        .enumerate()
        .map(|(i, &t)| (i as isize - r, t))
        .filter(|&(k, _)| k != 0)
        .collect();

    let mut horiz = vec![0f32; w * h];
    let mut padded = vec![0f32; w + 2 * r as usize];
    for y in 0..h {
        let row = x.row(y);
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[boundary_index(j as isize - r, w, spec.boundary)];
        }
        let out = &mut horiz[y * w..(y + 1) * w];
        for (xo, o) in out.iter_mut().enumerate() {
            let center = padded[xo + r as usize];
            let mut acc = 0f32;
            for &(k, t) in &side {
                acc += t * (padded[(xo as isize + r + k) as usize] - center);
            }
            *o = center + acc;
        }
    }

    let rows: Vec<usize> = (0..h as isize + 2 * r)
        .map(|j| boundary_index(j - r, h, spec.boundary))
        .collect();
    let mut out = vec![0f32; w * h];
    for yo in 0..h {
        let center = &horiz[yo * w..(yo + 1) * w];
        let mut acc = vec![0f32; w];
        for &(k, t) in &side {
            let src_row = rows[(yo as isize + r + k) as usize];
            let src = &horiz[src_row * w..(src_row + 1) * w];
            for ((a, &s), &c) in acc.iter_mut().zip(src).zip(center) {
                *a += t * (s - c);
            }
        }
        for ((d, &c), &a) in out[yo * w..(yo + 1) * w].iter_mut().zip(center).zip(&acc) {
            *d = c + a;
        }
    }
    Ok(Plane::new(w, h, out))
}

/// `alpha * (x - lowpass(x)) + x`, unclipped. `alpha == 0` returns `x` as-is.
pub fn usm_filter(x: &Plane, alpha: f64, spec: &GaussianSpec) -> Result<Plane, FilterError> {
    if !alpha.is_finite() {
        return Err(FilterError::BadAlpha(alpha));
    }
    spec.validate()?;
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    let low = gaussian_lowpass(x, spec)?;
    // One f32 rounding per output sample.
    let data = x
        .data
        .iter()
        .zip(&low.data)
        .map(|(&v, &l)| (alpha * (v as f64 - l as f64) + v as f64) as f32)
        .collect();
    Ok(Plane::new(x.width, x.height, data))
}

/// `x - lowpass(x)` for a single plane.
pub fn highpass_residual(x: &Plane, spec: &GaussianSpec) -> Result<Plane, FilterError> {
    let low = gaussian_lowpass(x, spec)?;
    let data = x.data.iter().zip(&low.data).map(|(&v, &l)| v - l).collect();
    Ok(Plane::new(x.width, x.height, data))
}

/// High-frequency mask of a frame: grayscale minus its low-pass, same size
/// as the frame.
pub fn highfreq_mask(frame: &Frame, spec: &GaussianSpec) -> Result<Plane, FilterError> {
    highpass_residual(&to_grayscale(frame), spec)
}

/// A strength-keyed preprocessing filter applied before encoding.
pub trait Preprocessor: Send + Sync {
    fn name(&self) -> &str;

    /// Filters one luma plane at strength `alpha`.
    fn apply_plane(&self, plane: &Plane, alpha: f64) -> Result<Plane, FilterError>;

    /// Filters the luma plane of every frame; chroma is copied through.
    fn apply_video(&self, video: &PlanarVideo, alpha: f64) -> Result<PlanarVideo, FilterError> {
        if alpha == 0.0 {
            return Ok(video.clone());
        }
        video.map_luma(|p| self.apply_plane(p, alpha))
    }
}

/// Unsharp masking with a Gaussian low-pass.
#[derive(Debug, Clone, Default)]
pub struct UnsharpMask {
    pub spec: GaussianSpec,
}

impl UnsharpMask {
    pub fn new(spec: GaussianSpec) -> Self {
        UnsharpMask { spec }
    }
}

impl Preprocessor for UnsharpMask {
    fn name(&self) -> &str {
        "usm"
    }

    fn apply_plane(&self, plane: &Plane, alpha: f64) -> Result<Plane, FilterError> {
        usm_filter(plane, alpha, &self.spec)
    }
}
