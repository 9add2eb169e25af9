/// Denominator floor for [`relative_error`], so that components whose true
/// gradient is near zero are compared on an absolute scale.
///
/// Central differences at eps 1e-6 carry roundoff of a few 1e-9 on losses of
/// order 10, so the floor sits well above that.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Central-difference gradient `(f(θ+ε) − f(θ−ε)) / 2ε`, one component at a time.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(
    mut loss: F,
    params: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut theta = params.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + eps;
            let plus = loss(&theta);
            theta[i] = orig - eps;
            let minus = loss(&theta);
            theta[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
