//! Cauchy robust loss on squared Mahalanobis residuals.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("squared residual must be non-negative and finite, got {0}")]
    InvalidInput(f64),
    #[error("Cauchy scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

/// `rho(s) = c^2 * ln(1 + s / c^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyLoss {
    c_sq: f64,
}

impl Default for CauchyLoss {
    fn default() -> Self {
        Self { c_sq: 1.0 }
    }
}

impl CauchyLoss {
    pub fn new(scale: f64) -> Result<Self, LossError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(LossError::InvalidScale(scale));
        }
        Ok(Self { c_sq: scale * scale })
    }

    pub fn scale(&self) -> f64 {
        self.c_sq.sqrt()
    }

    pub fn cost(&self, s: f64) -> Result<f64, LossError> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(LossError::InvalidInput(s));
        }
        Ok(self.rho(s))
    }

    #[inline]
    pub fn rho(&self, s: f64) -> f64 {
        self.c_sq * (s / self.c_sq).ln_1p()
    }

    /// `[rho(s), rho'(s), rho''(s)]`.
    #[inline]
    pub fn evaluate(&self, s: f64) -> [f64; 3] {
        let inv = 1.0 / (1.0 + s / self.c_sq);
        [self.rho(s), inv, -inv * inv / self.c_sq]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        let l = CauchyLoss::default();
        assert_eq!(l.cost(0.0).unwrap(), 0.0);
        assert_relative_eq!(l.cost(1.0).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        for s in [1e-4, 1e-6, 1e-9] {
            assert_relative_eq!(l.cost(s).unwrap() / s, 1.0, epsilon = 2.0 * s);
        }
        assert!(l.cost(-1e-12).is_err());
        assert!(l.cost(f64::NAN).is_err());
        assert!(CauchyLoss::new(0.0).is_err());
        assert_relative_eq!(CauchyLoss::new(2.0).unwrap().cost(4.0).unwrap(), 4.0 * 2f64.ln());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(a in 0.0..1e6f64, b in 0.0..1e6f64, c in 0.1..10.0f64) {
            let l = CauchyLoss::new(c).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(l.rho(lo) <= l.rho(hi));
            prop_assert!(l.rho(a) <= a + 1e-12);
        }

        #[test]
        fn derivatives_match_finite_differences(s in 0.01..100.0f64, c in 0.5..3.0f64) {
            let l = CauchyLoss::new(c).unwrap();
            let h = 1e-5 * s.max(1.0);
            let [_, d1, d2] = l.evaluate(s);
            let fd1 = (l.rho(s + h) - l.rho(s - h)) / (2.0 * h);
            let fd2 = (l.evaluate(s + h)[1] - l.evaluate(s - h)[1]) / (2.0 * h);
            prop_assert!((d1 - fd1).abs() < 1e-6 * d1.abs().max(1.0));
            prop_assert!((d2 - fd2).abs() < 1e-6 * d2.abs().max(1e-3));
        }
    }
}
