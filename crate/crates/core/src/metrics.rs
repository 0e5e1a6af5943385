//! Prediction metrics and spectral statistics, all in `f64`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::MetricError;
use crate::frame_io::Plane;

fn check_pair(pred: &[f64], gt: &[f64], min_len: usize) -> Result<(), MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.len() < min_len {
        return Err(MetricError::TooFew {
            have: pred.len(),
            need: min_len,
        });
    }
    if let Some(i) = pred.iter().chain(gt).position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i % pred.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson linear correlation coefficient, without logistic remapping.
pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, gt, 2)?;
    let (mp, mg) = (mean(pred), mean(gt));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        let (dp, dg) = (p - mp, g - mg);
        sxy += dp * dg;
        sxx += dp * dp;
        syy += dg * dg;
    }
    if sxx == 0.0 {
        return Err(MetricError::ConstantSequence("prediction"));
    }
    if syy == 0.0 {
        return Err(MetricError::ConstantSequence("ground-truth"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, gt, 1)?;
    let sse: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// 2D DFT of a plane, row-major, unnormalized.
pub fn dft2(plane: &Plane) -> Vec<Complex<f64>> {
    let (w, h) = (plane.width, plane.height);
    let mut data: Vec<Complex<f64>> = plane.data.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
    data
}

/// Signed frequency of DFT bin `k` of an `n`-point transform, in cycles per sample.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k <= n_f / 2.0 {
        k / n_f
    } else {
        k / n_f - 1.0
    }
}

/// Sum of `|X(f)|²` over non-DC bins whose radial frequency, normalized so
/// Nyquist along an axis is 1, exceeds `cutoff_fraction`.
pub fn hf_energy(plane: &Plane, cutoff_fraction: f64) -> Result<f64, MetricError> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
        return Err(MetricError::BadCutoff(cutoff_fraction));
    }
    let spec = dft2(plane);
    let (w, h) = (plane.width, plane.height);
    let mut e = 0.0;
    for y in 0..h {
        let fy = bin_frequency(y, h);
        for x in 0..w {
            if x == 0 && y == 0 {
                continue;
            }
            let fx = bin_frequency(x, w);
            let radius = 2.0 * (fx * fx + fy * fy).sqrt();
            if radius > cutoff_fraction {
                e += spec[y * w + x].norm_sqr();
            }
        }
    }
    Ok(e)
}
