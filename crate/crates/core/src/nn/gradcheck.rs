//! Finite-difference helpers for checking analytic gradients.

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest elementwise `|a - b| / (|a| + |b|)`; pairs whose magnitudes sum
/// below `1e-7` are compared against that floor instead.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = numeric_grad(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!(relative_error(&[4.0, 3.0], &g) < 1e-9);
        assert!(relative_error(&[4.0, 3.1], &g) > 1e-3);
    }
}
