//! Finite-difference gradient checking.
//!
//! The workhorse is [`central_diff`]: re-evaluate a scalar loss with each
//! input coordinate nudged up and down and form the symmetric quotient. Tests
//! compare that numeric gradient against the tape's analytic one with
//! [`max_rel_err`].

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let up = f(&point);
        point[i] = orig - eps;
        let down = f(&point);
        point[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Central-difference derivative along a single coordinate.
pub fn central_diff_at(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut point = x.to_vec();
    point[i] = x[i] + eps;
    let up = f(&point);
    point[i] = x[i] - eps;
    let down = f(&point);
    (up - down) / (2.0 * eps)
}

/// Largest relative error between two gradients. Each coordinate's
/// denominator is floored at `floor` so near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
