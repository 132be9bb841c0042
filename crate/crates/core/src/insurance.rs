//! Premium loadings and the drift coefficients they induce.
//!
//! The insurer collects premium at rate `(1 + eta_insurer) * lambda * E[Y]`
//! and cedes a fraction `1 - q` of every claim to a reinsurer charging the
//! loading `eta_reinsurer >= eta_insurer` (non-cheap reinsurance). Writing
//! the retained surplus drift as `b*q + a`:
//!
//! ```text
//!   b = lambda * E[Y] * eta_reinsurer         (premium kept per unit retention)
//!   a = lambda * E[Y] * (eta_insurer - eta_reinsurer)   (drift under full ceding)
//! ```
//!
//! so `b > 0` when claims arrive at all and `a <= 0` always.

use serde::{Deserialize, Serialize};

use crate::claims::ClaimDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsuranceParams {
    /// Claim arrival intensity, `>= 0`. Zero disables the insurance book.
    pub lambda: f64,
    /// Insurer safety loading, `> 0`.
    pub eta_insurer: f64,
    /// Reinsurer safety loading, `>= eta_insurer`.
    pub eta_reinsurer: f64,
    retention_premium: f64,
    full_ceding_drift: f64,
    premium_rate: f64,
}

impl InsuranceParams {
    pub fn new(
        lambda: f64,
        eta_insurer: f64,
        eta_reinsurer: f64,
        claims: &ClaimDistribution,
    ) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid(
                "insurance",
                format!("lambda {lambda} must be finite and >= 0"),
            ));
        }
        if !eta_insurer.is_finite() || eta_insurer <= 0.0 {
            return Err(Error::invalid(
                "insurance",
                format!("eta_insurer {eta_insurer} must be > 0"),
            ));
        }
        if !eta_reinsurer.is_finite() || eta_reinsurer < eta_insurer {
            return Err(Error::invalid(
                "insurance",
                format!("eta_reinsurer {eta_reinsurer} must be >= eta_insurer {eta_insurer}"),
            ));
        }
        let expected = lambda * claims.mean();
        Ok(Self {
            lambda,
            eta_insurer,
            eta_reinsurer,
            retention_premium: expected * eta_reinsurer,
            full_ceding_drift: expected * (eta_insurer - eta_reinsurer),
            premium_rate: (1.0 + eta_insurer) * expected,
        })
    }

    /// `b`: surplus drift earned per unit of retained exposure. Positive
    /// whenever `lambda > 0`.
    pub fn retention_premium(&self) -> f64 {
        self.retention_premium
    }

    /// `a`: surplus drift under full ceding (`q = 0`). Never positive.
    pub fn full_ceding_drift(&self) -> f64 {
        self.full_ceding_drift
    }

    /// Gross premium rate `(1 + eta_insurer) * lambda * E[Y]`.
    pub fn premium_rate(&self) -> f64 {
        self.premium_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimAtom;

    fn claims() -> ClaimDistribution {
        ClaimDistribution::new(
            vec![
                ClaimAtom {
                    size: 0.5,
                    prob: 0.5,
                },
                ClaimAtom {
                    size: 1.5,
                    prob: 0.5,
                },
            ],
            1.5,
        )
        .unwrap()
    }

    #[test]
    fn derived_rates() {
        let ins = InsuranceParams::new(2.0, 0.2, 0.3, &claims()).unwrap();
        assert!((ins.retention_premium() - 0.6).abs() < 1e-15);
        assert!((ins.full_ceding_drift() + 0.2).abs() < 1e-15);
        assert!((ins.premium_rate() - 2.4).abs() < 1e-15);
    }

    #[test]
    fn equal_loadings_zero_gap() {
        let ins = InsuranceParams::new(2.0, 0.25, 0.25, &claims()).unwrap();
        assert_eq!(ins.full_ceding_drift(), 0.0);
        assert!(ins.retention_premium() > 0.0);
    }

    #[test]
    fn zero_intensity_kills_drifts() {
        let ins = InsuranceParams::new(0.0, 0.2, 0.3, &claims()).unwrap();
        assert_eq!(ins.retention_premium(), 0.0);
        assert_eq!(ins.full_ceding_drift(), 0.0);
        assert_eq!(ins.premium_rate(), 0.0);
    }

    #[test]
    fn rejects_cheap_reinsurance() {
        assert!(InsuranceParams::new(2.0, 0.3, 0.2, &claims()).is_err());
    }

    #[test]
    fn rejects_nonpositive_loading() {
        assert!(InsuranceParams::new(2.0, 0.0, 0.3, &claims()).is_err());
        assert!(InsuranceParams::new(-1.0, 0.2, 0.3, &claims()).is_err());
    }
}
