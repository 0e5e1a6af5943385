//! Finite-difference checks of every backward pass, per layer and composed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::grad_check;
use super::ops::*;
use super::{Scalar, Tensor};

/// 32-bit mode: `ε = 2⁻¹⁰ ≈ 1e-3` on inputs that are multiples of 1/16, so
/// perturbed inputs and the forward arithmetic stay exact in `f32` and the
/// check sees backward errors rather than rounding noise.
const F32_EPS: f64 = 1.0 / 1024.0;
const F32_TOL: f64 = 1e-3;
const F64_EPS: f64 = 1e-5;
const F64_TOL: f64 = 1e-6;

/// Continuous uniform draws in 64-bit mode, multiples of 1/16 in 32-bit mode.
fn draw_for<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let dyadic = std::mem::size_of::<T>() == 4;
    (0..n)
        .map(|_| {
            let v = rng.gen_range(-scale..scale);
            if dyadic {
                (v * 16.0).round() / 16.0
            } else {
                v
            }
        })
        .collect()
}

/// As [`draw_for`], avoiding `|v| < margin` for inputs that pass through a kink.
fn draw_away<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64, margin: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = draw_for::<T>(rng, 1, scale)[0];
        if v.abs() >= margin {
            out.push(v);
        }
    }
    out
}

fn tensor<T: Scalar>(shape: &[usize], v: &[f64]) -> Tensor<T> {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| T::of(x)).collect()).unwrap()
}

/// `Σ r·y`, the scalar every layer check differentiates.
fn project<T: Scalar>(y: &Tensor<T>, r: &[f64]) -> f64 {
    y.data.iter().zip(r).map(|(&a, &b)| a.as_f64() * b).sum()
}

fn flat<T: Scalar>(ts: &[&Tensor<T>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data.iter().map(|v| v.as_f64())).collect()
}

fn conv_error<T: Scalar>(eps: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ws, bs) = ([1, 2, 4, 4], [3, 2, 3, 3], [3]);
    let g = Conv2dGeom { stride: 1, pad: 1 };
    let x = draw_for::<T>(&mut rng, 32, 1.0);
    let w = draw_for::<T>(&mut rng, 54, 1.0);
    let b = draw_for::<T>(&mut rng, 3, 1.0);
    let r = draw_for::<T>(&mut rng, 48, 1.0);
    let (xt, wt) = (tensor::<T>(&xs, &x), tensor::<T>(&ws, &w));
    let dy = tensor::<T>(&[1, 3, 4, 4], &r);
    let grads = conv2d_backward(&xt, &wt, &dy, g).unwrap();
    let analytic = flat(&[&grads.dx, &grads.dw, &grads.db]);
    let inputs: Vec<f64> = [x, w, b].concat();
    grad_check(
        |v| {
            let y = conv2d(
                &tensor::<T>(&xs, &v[..32]),
                &tensor::<T>(&ws, &v[32..86]),
                &tensor::<T>(&bs, &v[86..]),
                g,
            )
            .unwrap();
            project(&y, &r)
        },
        &inputs,
        &analytic,
        eps,
    )
    .max_rel_err
}

fn strided_conv_error<T: Scalar>(eps: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ws) = ([2, 1, 5, 5], [2, 1, 3, 3]);
    let g = Conv2dGeom { stride: 2, pad: 1 };
    let x = draw_for::<T>(&mut rng, 50, 1.0);
    let w = draw_for::<T>(&mut rng, 18, 1.0);
    let b = draw_for::<T>(&mut rng, 2, 1.0);
    let r = draw_for::<T>(&mut rng, 2 * 2 * 9, 1.0);
    let dy = tensor::<T>(&[2, 2, 3, 3], &r);
    let grads = conv2d_backward(&tensor::<T>(&xs, &x), &tensor::<T>(&ws, &w), &dy, g).unwrap();
    let analytic = flat(&[&grads.dx, &grads.dw, &grads.db]);
    grad_check(
        |v| {
            let y = conv2d(
                &tensor::<T>(&xs, &v[..50]),
                &tensor::<T>(&ws, &v[50..68]),
                &tensor::<T>(&[2], &v[68..]),
                g,
            )
            .unwrap();
            project(&y, &r)
        },
        &[x, w, b].concat(),
        &analytic,
        eps,
    )
    .max_rel_err
}

fn fc_error<T: Scalar>(eps: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = draw_for::<T>(&mut rng, 3 * 5, 1.0);
    let w = draw_for::<T>(&mut rng, 4 * 5, 1.0);
    let b = draw_for::<T>(&mut rng, 4, 1.0);
    let r = draw_for::<T>(&mut rng, 3 * 4, 1.0);
    let grads = fully_connected_backward(
        &tensor::<T>(&[3, 5], &x),
        &tensor::<T>(&[4, 5], &w),
        &tensor::<T>(&[3, 4], &r),
    )
    .unwrap();
    let analytic = flat(&[&grads.dx, &grads.dw, &grads.db]);
    grad_check(
        |v| {
            let y = fully_connected(
                &tensor::<T>(&[3, 5], &v[..15]),
                &tensor::<T>(&[4, 5], &v[15..35]),
                &tensor::<T>(&[4], &v[35..]),
            )
            .unwrap();
            project(&y, &r)
        },
        &[x, w, b].concat(),
        &analytic,
        eps,
    )
    .max_rel_err
}

fn unary_error<T: Scalar>(
    eps: f64,
    seed: u64,
    shape: &[usize],
    out_len: usize,
    fwd: impl Fn(&Tensor<T>) -> Tensor<T>,
    bwd: impl Fn(&Tensor<T>, &Tensor<T>) -> Tensor<T>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let x = draw_away::<T>(&mut rng, n, 1.0, 0.05);
    let r = draw_for::<T>(&mut rng, out_len, 1.0);
    let xt = tensor::<T>(shape, &x);
    let y = fwd(&xt);
    let dy = Tensor::new(y.shape.clone(), r.iter().map(|&v| T::of(v)).collect()).unwrap();
    let analytic = flat(&[&bwd(&xt, &dy)]);
    grad_check(|v| project(&fwd(&tensor::<T>(shape, v)), &r), &x, &analytic, eps).max_rel_err
}

fn all_unary_errors<T: Scalar>(eps: f64, seed: u64) -> Vec<(&'static str, f64)> {
    let s = [2, 3, 4, 6];
    vec![
        ("relu", unary_error::<T>(eps, seed, &s, 144, relu, |x, dy| relu_backward(x, dy).unwrap())),
        (
            "avgpool2",
            unary_error::<T>(eps, seed, &s, 36, |x| avgpool2(x).unwrap(), |x, dy| {
                avgpool2_backward(&x.shape, dy).unwrap()
            }),
        ),
        (
            "global_avgpool",
            unary_error::<T>(eps, seed, &s, 6, |x| global_avgpool(x).unwrap(), |x, dy| {
                global_avgpool_backward(&x.shape, dy).unwrap()
            }),
        ),
        (
            "adaptive_avgpool",
            unary_error::<T>(eps, seed, &s, 6 * 3 * 4, |x| adaptive_avgpool(x, 3, 4).unwrap(), |x, dy| {
                adaptive_avgpool_backward(&x.shape, dy).unwrap()
            }),
        ),
    ]
}

/// conv → relu → avgpool2 → global_avgpool → fully_connected → l1.
fn stack_loss<T: Scalar>(v: &[f64], gt: &Tensor<T>) -> (f64, Tensor<T>, Tensor<T>) {
    let g = Conv2dGeom { stride: 1, pad: 1 };
    let x = tensor::<T>(&[2, 2, 4, 4], &v[..64]);
    let w = tensor::<T>(&[3, 2, 3, 3], &v[64..118]);
    let b = tensor::<T>(&[3], &v[118..121]);
    let fw = tensor::<T>(&[2, 3], &v[121..127]);
    let fb = tensor::<T>(&[2], &v[127..129]);
    let z = conv2d(&x, &w, &b, g).unwrap();
    let a = relu(&z);
    let p = avgpool2(&a).unwrap();
    let q = global_avgpool(&p).unwrap();
    let y = fully_connected(&q, &fw, &fb).unwrap();
    let (loss, _) = l1_loss(&y, gt).unwrap();
    (loss.as_f64(), z, y)
}

fn stack_error<T: Scalar>(eps: f64, seed: u64, margin: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, gt) = loop {
        let v = draw_for::<T>(&mut rng, 129, 0.5);
        let (_, z, y) = stack_loss::<T>(&v, &Tensor::zeros(&[2, 2]));
        if z.data.iter().all(|&x| x.as_f64().abs() > margin) {
            // Targets half a unit from the outputs keep l1 off its kink.
            let gt: Vec<f64> = y.data.iter().map(|&p| (p.as_f64() * 16.0).round() / 16.0 + 0.5).collect();
            break (v, tensor::<T>(&[2, 2], &gt));
        }
    };
    let g = Conv2dGeom { stride: 1, pad: 1 };
    let x = tensor::<T>(&[2, 2, 4, 4], &v[..64]);
    let w = tensor::<T>(&[3, 2, 3, 3], &v[64..118]);
    let fw = tensor::<T>(&[2, 3], &v[121..127]);
    let (_, z, y) = stack_loss::<T>(&v, &gt);
    let a = relu(&z);
    let p = avgpool2(&a).unwrap();
    let q = global_avgpool(&p).unwrap();
    let (_, dy) = l1_loss(&y, &gt).unwrap();
    let fc = fully_connected_backward(&q, &fw, &dy).unwrap();
    let dp = global_avgpool_backward(&p.shape, &fc.dx).unwrap();
    let da = avgpool2_backward(&a.shape, &dp).unwrap();
    let dz = relu_backward(&z, &da).unwrap();
    let conv = conv2d_backward(&x, &w, &dz, g).unwrap();
    let analytic = flat(&[&conv.dx, &conv.dw, &conv.db, &fc.dw, &fc.db]);
    grad_check(|u| stack_loss::<T>(u, &gt).0, &v, &analytic, eps).max_rel_err
}

#[test]
fn conv2d_gradients() {
    for seed in 0..3 {
        let e32 = conv_error::<f32>(F32_EPS, seed);
        let e64 = conv_error::<f64>(F64_EPS, seed);
        assert!(e32 < F32_TOL, "f32 {e32}");
        assert!(e64 < F64_TOL, "f64 {e64}");
        let s64 = strided_conv_error::<f64>(F64_EPS, seed);
        assert!(s64 < F64_TOL, "strided f64 {s64}");
        let s32 = strided_conv_error::<f32>(F32_EPS, seed);
        assert!(s32 < F32_TOL, "strided f32 {s32}");
    }
}

#[test]
fn fully_connected_gradients() {
    for seed in 0..3 {
        let e32 = fc_error::<f32>(F32_EPS, seed);
        let e64 = fc_error::<f64>(F64_EPS, seed);
        assert!(e32 < F32_TOL, "f32 {e32}");
        assert!(e64 < F64_TOL, "f64 {e64}");
    }
}

#[test]
fn pooling_and_relu_gradients() {
    for seed in 0..3 {
        for (name, e) in all_unary_errors::<f64>(F64_EPS, seed) {
            assert!(e < F64_TOL, "{name} f64 {e}");
        }
        for (name, e) in all_unary_errors::<f32>(F32_EPS, seed) {
            assert!(e < F32_TOL, "{name} f32 {e}");
        }
    }
}

#[test]
fn l1_gradient_away_from_kinks_is_exact() {
    let pred = tensor::<f64>(&[4], &[1.0, -2.0, 0.5, 3.0]);
    let gt = tensor::<f64>(&[4], &[0.0, 0.0, 1.0, 2.0]);
    let (_, g) = l1_loss(&pred, &gt).unwrap();
    assert_eq!(g.data, vec![0.25, -0.25, -0.25, 0.25]);
    let x: Vec<f64> = pred.data.clone();
    let r = grad_check(|v| l1_loss(&tensor::<f64>(&[4], v), &gt).unwrap().0, &x, &g.data, F64_EPS);
    assert!(r.max_rel_err < F64_TOL);
}

#[test]
fn composed_stack_gradients() {
    for seed in 0..3 {
        let e64 = stack_error::<f64>(F64_EPS, seed, 1e-3);
        assert!(e64 < F64_TOL, "f64 {e64}");
        let e32 = stack_error::<f32>(F32_EPS, seed, 2e-2);
        assert!(e32 < F32_TOL, "f32 {e32}");
    }
}
