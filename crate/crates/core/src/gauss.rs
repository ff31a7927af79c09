//! Isotropic Gaussian helpers on the unit square.

use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

use crate::domain::Point2;

/// Standard normal CDF via `erfc`, which keeps precision in the lower tail.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Mass of N(mean, std²) on [0, 1].
pub fn unit_interval_mass(mean: f64, std: f64) -> f64 {
    let hi = normal_cdf((1.0 - mean) / std);
    let lo = normal_cdf(-mean / std);
    (hi - lo).max(0.0)
}

/// Mass of an isotropic 2-D Gaussian on the unit square.
pub fn unit_square_mass(mean: Point2, std: f64) -> f64 {
    unit_interval_mass(mean.x(), std) * unit_interval_mass(mean.y(), std)
}

/// Log-density of an isotropic 2-D Gaussian with variance `var` per axis.
pub fn log_pdf_2d(p: Point2, mean: Point2, var: f64) -> f64 {
    let dx = p.x() - mean.x();
    let dy = p.y() - mean.y();
    -(dx * dx + dy * dy) / (2.0 * var) - (2.0 * PI * var).ln()
}

/// `log(sum(exp(xs)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-11);
        assert!(normal_cdf(-40.0) >= 0.0);
    }

    #[test]
    fn interval_mass_limits() {
        assert_abs_diff_eq!(unit_interval_mass(0.5, 1e-3), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(unit_interval_mass(0.0, 1e-3), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.1, -2.0, 1.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&xs), naive, epsilon = 1e-14);
        assert_abs_diff_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
    }
}
