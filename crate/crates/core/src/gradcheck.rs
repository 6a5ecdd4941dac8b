//! Shared pieces of the finite-difference gradient checks.

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central difference `(f(x + e) - f(x - e)) / 2e`.
pub fn central_difference(plus: f64, minus: f64, epsilon: f64) -> f64 {
    (plus - minus) / (2.0 * epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        // Near-zero pair falls back to the absolute scale.
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_cubic() {
        let f = |x: f64| x * x * x;
        let e = 1e-5;
        let d = central_difference(f(2.0 + e), f(2.0 - e), e);
        assert!(relative_error(12.0, d) < 1e-8);
    }
}
