//! Layer primitives with analytic backward passes.
//!
//! Every output sample is accumulated in one fixed order (bias, then input
//! channel, kernel row, kernel column, all ascending), so results are
//! reproducible bit for bit.

use super::tensor::{Scalar, Tensor};
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Range of output columns `o` for which `o*stride + k - pad` lands inside `[0, len)`.
#[inline]
fn valid_out_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad  and  o*stride + k - pad <= len - 1
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi_num = len as isize - 1 + pad as isize - k as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

struct ConvShape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_conv<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    g: Conv2dGeom,
) -> Result<ConvShape, NnError> {
    let (n, c, h, wd) = x.dims4("conv2d")?;
    let (o, i, kh, kw) = w.dims4("conv2d")?;
    if i != c {
        return Err(NnError::shape(
            "conv2d",
            format!("input {:?} has {c} channels, weight {:?} expects {i}", x.shape, w.shape),
        ));
    }
    if b.shape != [o] {
        return Err(NnError::shape(
            "conv2d",
            format!("bias {:?} does not match weight {:?}", b.shape, w.shape),
        ));
    }
    let oh = conv_out_len(h, kh, g.stride, g.pad);
    let ow = conv_out_len(wd, kw, g.stride, g.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvShape {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh,
            ow,
        }),
        _ => Err(NnError::shape(
            "conv2d",
            format!(
                "input {:?} with kernel {:?}, stride {}, pad {} has no output",
                x.shape, w.shape, g.stride, g.pad
            ),
        )),
    }
}

/// 2D cross-correlation.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    g: Conv2dGeom,
) -> Result<Tensor<T>, NnError> {
    let ConvShape {
        n,
        c,
        h,
        w: wd,
        o,
        kh,
        kw,
        oh,
        ow,
    } = check_conv(x, w, b, g)?;
    let s = g.stride;
    let mut y = vec![T::zero(); n * o * oh * ow];
    for ni in 0..n {
        for oc in 0..o {
            let out = &mut y[(ni * o + oc) * oh * ow..][..oh * ow];
            out.fill(b.data[oc]);
            for ic in 0..c {
                let plane = &x.data[(ni * c + ic) * h * wd..][..h * wd];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_out_range(h, oh, ky, s, g.pad);
                    for kx in 0..kw {
                        let wv = w.data[((oc * c + ic) * kh + ky) * kw + kx];
                        let (ox0, ox1) = valid_out_range(wd, ow, kx, s, g.pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - g.pad;
                            let row = &plane[iy * wd..][..wd];
                            let orow = &mut out[oy * ow..][ox0..ox1];
                            if s == 1 {
                                let src = &row[ox0 + kx - g.pad..][..ox1 - ox0];
                                for (d, &v) in orow.iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            } else {
                                for (j, d) in orow.iter_mut().enumerate() {
                                    *d += wv * row[(ox0 + j) * s + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], y)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias given `dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: Conv2dGeom,
) -> Result<ConvGrads<T>, NnError> {
    let b = Tensor::zeros(&[w.shape[0]]);
    let ConvShape {
        n,
        c,
        h,
        w: wd,
        o,
        kh,
        kw,
        oh,
        ow,
    } = check_conv(x, w, &b, g)?;
    if dy.shape != [n, o, oh, ow] {
        return Err(NnError::shape(
            "conv2d_backward",
            format!("dy {:?}, expected {:?}", dy.shape, [n, o, oh, ow]),
        ));
    }
    let s = g.stride;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); o];
    for ni in 0..n {
        for oc in 0..o {
            let grad = &dy.data[(ni * o + oc) * oh * ow..][..oh * ow];
            let mut acc = T::zero();
            for &v in grad {
                acc += v;
            }
            db[oc] += acc;
            for ic in 0..c {
                let base = (ni * c + ic) * h * wd;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_out_range(h, oh, ky, s, g.pad);
                    for kx in 0..kw {
                        let widx = ((oc * c + ic) * kh + ky) * kw + kx;
                        let wv = w.data[widx];
                        let (ox0, ox1) = valid_out_range(wd, ow, kx, s, g.pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut wacc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - g.pad;
                            let grow = &grad[oy * ow..][ox0..ox1];
                            let xrow = &x.data[base + iy * wd..][..wd];
                            let dxrow = &mut dx[base + iy * wd..][..wd];
                            if s == 1 {
                                let off = ox0 + kx - g.pad;
                                let xs = &xrow[off..][..ox1 - ox0];
                                for (&gv, &xv) in grow.iter().zip(xs) {
                                    wacc += gv * xv;
                                }
                                for (d, &gv) in dxrow[off..][..ox1 - ox0].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let ix = (ox0 + j) * s + kx - g.pad;
                                    wacc += gv * xrow[ix];
                                    dxrow[ix] += wv * gv;
                                }
                            }
                        }
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: Tensor::new(x.shape.clone(), dx)?,
        dw: Tensor::new(w.shape.clone(), dw)?,
        db: Tensor::new(vec![o], db)?,
    })
}

/// `max(x, 0)`; negative inputs and zero map to `+0.0`.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if x.shape != dy.shape {
        return Err(NnError::shape(
            "relu_backward",
            format!("{:?} vs {:?}", x.shape, dy.shape),
        ));
    }
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape.clone(), data)
}

/// Mean over each bin of an adaptive `oh×ow` pooling grid. Bin `i` spans
/// `[floor(i·H/oh), ceil((i+1)·H/oh))`.
pub fn adaptive_avgpool<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4("adaptive_avgpool")?;
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(NnError::shape(
            "adaptive_avgpool",
            format!("cannot pool {:?} to {oh}x{ow}", x.shape),
        ));
    }
    let ybins: Vec<(usize, usize)> = (0..oh).map(|i| (i * h / oh, ((i + 1) * h).div_ceil(oh))).collect();
    let xbins: Vec<(usize, usize)> = (0..ow).map(|i| (i * w / ow, ((i + 1) * w).div_ceil(ow))).collect();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks_exact(h * w) {
        for &(y0, y1) in &ybins {
            for &(x0, x1) in &xbins {
                let mut acc = T::zero();
                for yy in y0..y1 {
                    for &v in &plane[yy * w + x0..yy * w + x1] {
                        acc += v;
                    }
                }
                out.push(acc / T::of(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn adaptive_avgpool_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(NnError::shape("adaptive_avgpool_backward", format!("{input_shape:?}"))),
    };
    let (dn, dc, oh, ow) = dy.dims4("adaptive_avgpool_backward")?;
    if (dn, dc) != (n, c) {
        return Err(NnError::shape(
            "adaptive_avgpool_backward",
            format!("dy {:?} vs input {input_shape:?}", dy.shape),
        ));
    }
    let mut dx = vec![T::zero(); n * c * h * w];
    for (p, plane) in dx.chunks_exact_mut(h * w).enumerate() {
        for i in 0..oh {
            let (y0, y1) = (i * h / oh, ((i + 1) * h).div_ceil(oh));
            for j in 0..ow {
                let (x0, x1) = (j * w / ow, ((j + 1) * w).div_ceil(ow));
                let g = dy.data[(p * oh + i) * ow + j] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for yy in y0..y1 {
                    for v in &mut plane[yy * w + x0..yy * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// 2×2 stride-2 mean pooling; odd trailing rows/columns are dropped.
pub fn avgpool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4("avgpool2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(NnError::shape("avgpool2", format!("input {:?} too small", x.shape)));
    }
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks_exact(h * w) {
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(NnError::shape("avgpool2_backward", format!("{input_shape:?}"))),
    };
    let (oh, ow) = (h / 2, w / 2);
    if dy.shape != [n, c, oh, ow] {
        return Err(NnError::shape(
            "avgpool2_backward",
            format!("dy {:?} vs input {input_shape:?}", dy.shape),
        ));
    }
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); n * c * h * w];
    for (plane, g) in dx.chunks_exact_mut(h * w).zip(dy.data.chunks_exact(oh * ow)) {
        for y in 0..oh {
            for xo in 0..ow {
                let v = g[y * ow + xo] * quarter;
                let i = 2 * y * w + 2 * xo;
                plane[i] = v;
                plane[i + 1] = v;
                plane[i + w] = v;
                plane[i + w + 1] = v;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Nearest-neighbour 2× upsampling by sample duplication.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4("upsample2")?;
    let mut out = vec![T::zero(); n * c * 4 * h * w];
    for (src, dst) in x.data.chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
        for y in 0..2 * h {
            for xo in 0..2 * w {
                dst[y * 2 * w + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Mean over H and W: `N×C×H×W -> N×C`.
pub fn global_avgpool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4("global_avgpool")?;
    let inv = T::of(1.0 / (h * w) as f64);
    let data = x
        .data
        .chunks_exact(h * w)
        .map(|p| {
            let mut acc = T::zero();
            for &v in p {
                acc += v;
            }
            acc * inv
        })
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avgpool_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(NnError::shape("global_avgpool_backward", format!("{input_shape:?}"))),
    };
    if dy.shape != [n, c] {
        return Err(NnError::shape(
            "global_avgpool_backward",
            format!("dy {:?} vs input {input_shape:?}", dy.shape),
        ));
    }
    let inv = T::of(1.0 / (h * w) as f64);
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in &dy.data {
        dx.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `y = x·Wᵀ + b` with `x: N×In`, `W: Out×In`, `b: Out`.
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, fin) = x.dims2("fully_connected")?;
    let (fout, win) = w.dims2("fully_connected")?;
    if win != fin || b.shape != [fout] {
        return Err(NnError::shape(
            "fully_connected",
            format!("x {:?}, weight {:?}, bias {:?}", x.shape, w.shape, b.shape),
        ));
    }
    let mut y = Vec::with_capacity(n * fout);
    for row in x.data.chunks_exact(fin) {
        for (o, wrow) in w.data.chunks_exact(fin).enumerate() {
            let mut acc = b.data[o];
            for (&a, &wv) in row.iter().zip(wrow) {
                acc += a * wv;
            }
            y.push(acc);
        }
    }
    Tensor::new(vec![n, fout], y)
}

pub struct FcGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn fully_connected_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<FcGrads<T>, NnError> {
    let (n, fin) = x.dims2("fully_connected_backward")?;
    let (fout, win) = w.dims2("fully_connected_backward")?;
    if win != fin || dy.shape != [n, fout] {
        return Err(NnError::shape(
            "fully_connected_backward",
            format!("x {:?}, weight {:?}, dy {:?}", x.shape, w.shape, dy.shape),
        ));
    }
    let mut dx = vec![T::zero(); n * fin];
    let mut dw = vec![T::zero(); fout * fin];
    let mut db = vec![T::zero(); fout];
    for ni in 0..n {
        let xrow = &x.data[ni * fin..][..fin];
        let dxrow = &mut dx[ni * fin..][..fin];
        for o in 0..fout {
            let g = dy.data[ni * fout + o];
            db[o] += g;
            let wrow = &w.data[o * fin..][..fin];
            let dwrow = &mut dw[o * fin..][..fin];
            for k in 0..fin {
                dxrow[k] += g * wrow[k];
                dwrow[k] += g * xrow[k];
            }
        }
    }
    Ok(FcGrads {
        dx: Tensor::new(x.shape.clone(), dx)?,
        dw: Tensor::new(w.shape.clone(), dw)?,
        db: Tensor::new(vec![fout], db)?,
    })
}

/// Mean absolute error and its gradient w.r.t. `pred`. The subgradient at
/// `pred == gt` is zero.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    if pred.shape != gt.shape {
        return Err(NnError::shape(
            "l1_loss",
            format!("pred {:?} vs gt {:?}", pred.shape, gt.shape),
        ));
    }
    let n = T::of(pred.len().max(1) as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let d = p - g;
        total += d.abs();
        grad.push(if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        });
    }
    Ok((total / n, Tensor::new(pred.shape.clone(), grad)?))
}
