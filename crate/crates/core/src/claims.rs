//! Finitely supported claim-size distributions.
//!
//! Every jump integral in the backward equations and every retention
//! optimum reduces to a finite sum over the atoms, so the distribution is
//! stored as explicit (size, probability) pairs. `second_moment` is the raw
//! second moment, not the variance; the retention denominators want E[Y^2].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;

/// One point of the claim-size law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimAtom {
    /// Claim size, strictly positive.
    pub size: f64,
    /// Probability mass, strictly positive.
    pub prob: f64,
}

/// Finitely supported claim-size law with an explicit support bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimDistribution {
    atoms: Vec<ClaimAtom>,
    max_size: f64,
}

impl ClaimDistribution {
    /// Validates and freezes a claim law.
    ///
    /// Requires at least one atom, strictly positive sizes and masses,
    /// masses summing to one within 1e-12, and every size within
    /// `(0, max_size]`.
    pub fn new(atoms: Vec<ClaimAtom>, max_size: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("claims", "no atoms"));
        }
        if !max_size.is_finite() || max_size <= 0.0 {
            return Err(Error::invalid(
                "claims",
                format!("max_size {max_size} must be finite and positive"),
            ));
        }
        let mut total = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            if !a.size.is_finite() || a.size <= 0.0 {
                return Err(Error::invalid(
                    "claims",
                    format!("atom {i}: size {} must be positive", a.size),
                ));
            }
            if a.size > max_size {
                return Err(Error::invalid(
                    "claims",
                    format!("atom {i}: size {} exceeds max_size {max_size}", a.size),
                ));
            }
            if !a.prob.is_finite() || a.prob <= 0.0 {
                return Err(Error::invalid(
                    "claims",
                    format!("atom {i}: prob {} must be positive", a.prob),
                ));
            }
            total += a.prob;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(
                "claims",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(Self { atoms, max_size })
    }

    /// Degenerate law putting all mass on one size.
    pub fn degenerate(size: f64) -> Result<Self> {
        Self::new(vec![ClaimAtom { size, prob: 1.0 }], size)
    }

    pub fn atoms(&self) -> &[ClaimAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one atom
    }

    /// Declared support bound; every atom size is `<= max_size`.
    pub fn max_size(&self) -> f64 {
        self.max_size
    }

    /// Smallest atom size. Used to seed bracket searches in `1/size` scale.
    pub fn min_atom_size(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.size)
            .fold(f64::INFINITY, f64::min)
    }

    /// E[Y], written `b_Y` in the drift coefficients.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.size).sum()
    }

    /// Raw second moment E[Y^2]; denominators of retention ratios.
    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.size * a.size).sum()
    }

    /// Inverse-CDF sample: maps a uniform draw on [0,1) to an atom index.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            acc += a.prob;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }
}

/// One sampled arrival of the claim process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimEvent {
    pub time: f64,
    /// Index into the distribution's atom list.
    pub atom: usize,
}

/// Samples all arrivals on `(0, horizon]` by exact exponential interarrival
/// times. Per event the draw order is fixed (interarrival uniform, then size
/// uniform) so streams stay reproducible across consumers.
pub fn sample_claim_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: f64,
    horizon: f64,
    dist: &ClaimDistribution,
) -> Vec<ClaimEvent> {
    let mut events = Vec::new();
    if lambda <= 0.0 {
        return events;
    }
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        // u in [0,1): 1-u in (0,1] keeps the log finite
        t += -(1.0 - u).ln() / lambda;
        if !(t <= horizon) {
            return events;
        }
        let atom = dist.sample_index(rng.gen());
        events.push(ClaimEvent { time: t, atom });
    }
}
