//! Central finite-difference gradient checking.

/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding compare on an absolute scale instead of blowing up.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Relative error `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic[i]` with `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` for
/// every coordinate of `inputs`. `f` is evaluated on a scratch copy.
pub fn grad_check<F>(mut f: F, inputs: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut x = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_err || i == 0 {
            report = GradCheckReport {
                max_rel_err: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    report
}
