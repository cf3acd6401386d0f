//! Central finite-difference utilities, used by the test suites to verify
//! every hand-derived gradient, and by the `optimizers` example.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative agreement between an analytic and a numeric derivative:
/// `|a - b| <= abs_tol + rel_tol * max(|a|, |b|)` per coordinate.
pub fn gradients_agree(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) -> bool {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).all(|(a, b)| {
        let scale = a.abs().max(b.abs());
        (a - b).abs() <= abs_tol + rel_tol * scale
    })
}

/// Worst per-coordinate relative error, with a floor on the denominator.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Convenience: compare `analytic` against the central difference of `f`
/// at `x` using step `h = 1e-5`.
pub fn central_diff_matches<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> bool
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_difference(f, x, 1e-5);
    gradients_agree(analytic, &numeric, rel_tol, abs_tol)
}
