//! Distances and contraction quantities.

mod assignment;
mod coupling;

pub use assignment::{assignment, w1_assignment, w1_subsampled};
pub use coupling::{maximal_coupling_step, CouplingOutcome};

use crate::error::{Error, Result};

/// Standard Gaussian tail probability `Q(a) = P(Z ≥ a) = erfc(a/√2)/2`.
///
/// Uses the rational/asymptotic `erfc` approximation from `libm` (fdlibm),
/// accurate to well below 1e-12 absolute and relative over the whole line.
pub fn gaussian_tail_q(a: f64) -> f64 {
    0.5 * libm::erfc(a / std::f64::consts::SQRT_2)
}

/// Per-iteration contraction factor `λ = 2·Q(B / (2·√(t_max² − t_min²)))`
/// for a support diameter bound `B`.
pub fn contraction_factor_lambda(b: f64, t_min: f64, t_max: f64) -> Result<f64> {
    if !(b >= 0.0) {
        return Err(Error::domain(format!("diameter bound must be >= 0, got {b}")));
    }
    if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
        return Err(Error::domain(format!("need 0 < t_min < t_max, got [{t_min}, {t_max}]")));
    }
    let spread = (t_max * t_max - t_min * t_min).sqrt();
    Ok(2.0 * gaussian_tail_q(b / (2.0 * spread)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Composite Simpson on `[a, a + 12]` of the standard normal density.
    fn q_by_quadrature(a: f64) -> f64 {
        let n = 20_000;
        let h = 12.0 / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(a + 12.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn q_known_values() {
        assert_eq!(gaussian_tail_q(0.0), 0.5);
        assert_relative_eq!(gaussian_tail_q(1.7) + gaussian_tail_q(-1.7), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gaussian_tail_q(1.0), q_by_quadrature(1.0), epsilon = 1e-12);
        assert!((gaussian_tail_q(1.0) - 0.158655).abs() < 1e-6);
    }

    #[test]
    fn q_matches_independent_erfc() {
        for i in -60..=120 {
            let a = i as f64 * 0.1;
            let reference = 0.5 * statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
            // the reference itself is only good to ~1e-11
            assert_relative_eq!(gaussian_tail_q(a), reference, max_relative = 1e-9, epsilon = 1e-300);
        }
        for i in -8..=32 {
            let a = i as f64 * 0.25;
            assert_relative_eq!(gaussian_tail_q(a), q_by_quadrature(a), max_relative = 1e-12);
        }
    }

    #[test]
    fn lambda_values_and_monotonicity() {
        assert_eq!(contraction_factor_lambda(0.0, 0.1, 1.0).unwrap(), 1.0);
        let spread = (1.5f64 * 1.5 - 1.0).sqrt();
        assert_relative_eq!(
            contraction_factor_lambda(2.0 * spread, 1.0, 1.5).unwrap(),
            0.31731,
            epsilon = 1e-5
        );
        let mut prev = 1.0;
        for i in 1..50 {
            let l = contraction_factor_lambda(i as f64 * 0.5, 0.2, 1.0).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        let mut prev = 0.0;
        for i in 1..30 {
            let l = contraction_factor_lambda(3.0, 0.2, 0.2 + i as f64 * 0.1).unwrap();
            assert!(l > prev && l < 1.0);
            prev = l;
        }
    }

    #[test]
    fn lambda_rejects_bad_intervals() {
        assert!(contraction_factor_lambda(1.0, 1.0, 1.0).is_err());
        assert!(contraction_factor_lambda(1.0, 0.0, 1.0).is_err());
        assert!(contraction_factor_lambda(-1.0, 0.1, 1.0).is_err());
    }
}
