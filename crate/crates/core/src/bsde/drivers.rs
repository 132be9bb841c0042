//! Drift terms of the four scalar backward equations.
//!
//! Conventions: every function here returns pieces of the dt-coefficient of
//! the equation it belongs to, written so that
//!
//! ```text
//!   dP  = -driver_p dt  + martingales      (monotone weight equation)
//!   dP1 = -(2 r P1 + f1_star + g1_star) dt + martingales
//!   dP2 = -(2 r P2 + f2_star + g2_star) dt + martingales
//!   dY  = +driver_y dt  + martingales      (reciprocal weight equation)
//! ```
//!
//! The investment infimum collapses to a cone projection: completing the
//! square in `pi` and using `|proj(w)|^2 = proj(w)'w` gives
//!
//! ```text
//!   inf_{pi in K} { p |sigma' pi|^2 - 2 pi' sigma (p phi + delta) }
//!     = -p |Proj_{sigma'K}(phi + delta/p)|^2,
//! ```
//!
//! and the retention infimum has the closed positive-part form implemented
//! by `g2_star` (quadratic branch) and `minimize_g1` (piecewise branch).

use nalgebra::DVector;

use crate::claims::ClaimDistribution;
use crate::cone::{project_cone, ConeConstraint};
use crate::error::{Error, Result};
use crate::insurance::InsuranceParams;
use crate::market::Coefficients;

/// Everything a driver evaluation needs at one `(t, state)` slice.
#[derive(Clone, Copy)]
pub struct DriverInputs<'a> {
    pub coeffs: &'a Coefficients,
    pub cone: &'a ConeConstraint,
    pub claims: &'a ClaimDistribution,
    pub insurance: &'a InsuranceParams,
}

/// `-p * |Proj_{sigma'K}( s*(phi + delta/p) )|^2` with `s = +/-1`.
fn investment_infimum(
    p: f64,
    diffusion: &DVector<f64>,
    negate: bool,
    inputs: &DriverInputs,
) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::positivity("driver", format!("value {p} <= 0")));
    }
    let mut v = inputs.coeffs.phi() + diffusion / p;
    if negate {
        v = -v;
    }
    let proj = project_cone(&v, &inputs.coeffs.sigma, inputs.cone)?;
    Ok(-p * proj.xi.norm_squared())
}

/// Numerator/denominator of the quadratic retention ratio; `None` when
/// claims never arrive.
fn jump_terms(
    p: f64,
    jumps: &[f64],
    inputs: &DriverInputs,
) -> Result<Option<(f64, f64)>> {
    let lambda = inputs.insurance.lambda;
    if lambda == 0.0 {
        return Ok(None);
    }
    if jumps.len() != inputs.claims.len() {
        return Err(Error::invalid(
            "driver",
            format!(
                "{} jump components vs {} atoms",
                jumps.len(),
                inputs.claims.len()
            ),
        ));
    }
    let mut num = p * inputs.insurance.retention_premium();
    let mut den = 0.0;
    for (atom, &g) in inputs.claims.atoms().iter().zip(jumps) {
        if !(p + g > 0.0) {
            return Err(Error::positivity(
                "driver",
                format!("value + jump = {} at atom {}", p + g, atom.size),
            ));
        }
        num -= g * atom.size * lambda * atom.prob;
        den += (p + g) * atom.size * atom.size * lambda * atom.prob;
    }
    Ok(Some((num, den)))
}

/// Optimal quadratic retention gain, `<= 0`:
/// `g2_star = -[(p b - sum gamma_i y_i lambda p_i)^+]^2 / sum (p+gamma_i) y_i^2 lambda p_i`.
pub fn g2_star(p: f64, jumps: &[f64], inputs: &DriverInputs) -> Result<f64> {
    match jump_terms(p, jumps, inputs)? {
        None => Ok(0.0),
        Some((num, den)) => {
            let pos = num.max(0.0);
            Ok(-pos * pos / den)
        }
    }
}

/// Minimizing retention for the quadratic branch; the feedback ratio of the
/// below-target region.
pub fn rho_mv(p: f64, jumps: &[f64], inputs: &DriverInputs) -> Result<f64> {
    match jump_terms(p, jumps, inputs)? {
        None => Ok(0.0),
        Some((num, den)) => Ok(num.max(0.0) / den),
    }
}

/// Driver of the monotone weight equation `(dP = -driver_p dt + ...)`.
pub fn driver_p(
    p: f64,
    diffusion: &DVector<f64>,
    jumps: &[f64],
    inputs: &DriverInputs,
) -> Result<f64> {
    Ok(investment_infimum(p, diffusion, false, inputs)? + g2_star(p, jumps, inputs)?)
}

/// `f2_star`: investment infimum of the below-target equation.
pub fn f2_star(p2: f64, diffusion: &DVector<f64>, inputs: &DriverInputs) -> Result<f64> {
    investment_infimum(p2, diffusion, false, inputs)
}

/// `f1_star`: investment infimum of the above-target equation (reflected
/// direction).
pub fn f1_star(p1: f64, diffusion: &DVector<f64>, inputs: &DriverInputs) -> Result<f64> {
    investment_infimum(p1, diffusion, true, inputs)
}

/// The piecewise retention objective of the above-target equation:
///
/// ```text
///   G1(u) = sum_i [ (p1+g1_i)(((1-u y_i)^+)^2 - 1)
///                 + (p2+g2_i)((1-u y_i)^-)^2 ] lambda p_i
///           + 2 u p1 (b + lambda E[Y])
/// ```
///
/// Convex on `u >= 0` with `G1(0) = 0`.
pub fn g1(
    u: f64,
    p1: f64,
    jumps1: &[f64],
    p2: f64,
    jumps2: &[f64],
    inputs: &DriverInputs,
) -> f64 {
    let ins = inputs.insurance;
    let lambda = ins.lambda;
    let mut total = 2.0 * u * p1 * (ins.retention_premium() + lambda * inputs.claims.mean());
    for (i, atom) in inputs.claims.atoms().iter().enumerate() {
        let w = 1.0 - u * atom.size;
        let pos = w.max(0.0);
        let neg = (-w).max(0.0);
        total += ((p1 + jumps1[i]) * (pos * pos - 1.0) + (p2 + jumps2[i]) * neg * neg)
            * lambda
            * atom.prob;
    }
    total
}

fn g1_derivative(
    u: f64,
    p1: f64,
    jumps1: &[f64],
    p2: f64,
    jumps2: &[f64],
    inputs: &DriverInputs,
) -> f64 {
    let ins = inputs.insurance;
    let lambda = ins.lambda;
    let mut total = 2.0 * p1 * (ins.retention_premium() + lambda * inputs.claims.mean());
    for (i, atom) in inputs.claims.atoms().iter().enumerate() {
        let w = 1.0 - u * atom.size;
        if w > 0.0 {
            total -= 2.0 * (p1 + jumps1[i]) * w * atom.size * lambda * atom.prob;
        } else if w < 0.0 {
            total += 2.0 * (p2 + jumps2[i]) * (-w) * atom.size * lambda * atom.prob;
        }
    }
    total
}

const G1_TOL: f64 = 1e-10;

/// Minimizes `G1` over `u >= 0`. Returns `(rho1, G1*)`.
///
/// Early exit: a nonnegative right derivative at zero pins the minimum at
/// exactly `(0, 0)`, which happens in particular whenever all `jumps1` are
/// zero. Otherwise the minimum is bracketed by doubling from `2 / y_min`
/// and resolved by ternary search; `G1` is strictly convex there.
pub fn minimize_g1(
    p1: f64,
    jumps1: &[f64],
    p2: f64,
    jumps2: &[f64],
    inputs: &DriverInputs,
) -> Result<(f64, f64)> {
    if inputs.insurance.lambda == 0.0 {
        return Ok((0.0, 0.0));
    }
    if jumps1.len() != inputs.claims.len() || jumps2.len() != inputs.claims.len() {
        return Err(Error::invalid("retention objective", "jump component count"));
    }
    if !(p1 > 0.0) || !(p2 > 0.0) {
        return Err(Error::positivity("retention objective", "p1, p2 must be > 0"));
    }
    for (i, atom) in inputs.claims.atoms().iter().enumerate() {
        if !(p1 + jumps1[i] > 0.0) || !(p2 + jumps2[i] > 0.0) {
            return Err(Error::positivity(
                "retention objective",
                format!("value + jump <= 0 at atom {}", atom.size),
            ));
        }
    }

    if g1_derivative(0.0, p1, jumps1, p2, jumps2, inputs) >= 0.0 {
        return Ok((0.0, 0.0));
    }

    let mut hi = 2.0 / inputs.claims.min_atom_size();
    let mut doubles = 0;
    while g1_derivative(hi, p1, jumps1, p2, jumps2, inputs) < 0.0 {
        hi *= 2.0;
        doubles += 1;
        if doubles > 200 {
            return Err(Error::solver(
                "retention objective",
                "minimum bracket did not close",
            ));
        }
    }

    let mut lo = 0.0;
    while hi - lo > G1_TOL {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g1(m1, p1, jumps1, p2, jumps2, inputs) <= g1(m2, p1, jumps1, p2, jumps2, inputs) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let rho1 = 0.5 * (lo + hi);
    Ok((rho1, g1(rho1, p1, jumps1, p2, jumps2, inputs)))
}

/// Driver of the above-target equation including the rate term:
/// `dP1 = -driver_p1_full dt + ...`.
pub fn driver_p1_full(
    p1: f64,
    diffusion1: &DVector<f64>,
    jumps1: &[f64],
    p2: f64,
    jumps2: &[f64],
    inputs: &DriverInputs,
) -> Result<f64> {
    let (_, g1s) = minimize_g1(p1, jumps1, p2, jumps2, inputs)?;
    Ok(2.0 * inputs.coeffs.rate * p1 + f1_star(p1, diffusion1, inputs)? + g1s)
}

/// Driver of the below-target equation including the rate term:
/// `dP2 = -driver_p2_full dt + ...`.
pub fn driver_p2_full(
    p2: f64,
    diffusion: &DVector<f64>,
    jumps: &[f64],
    inputs: &DriverInputs,
) -> Result<f64> {
    Ok(2.0 * inputs.coeffs.rate * p2 + driver_p(p2, diffusion, jumps, inputs)?)
}

/// dt-coefficient of the reciprocal weight equation `dY = driver_y dt + ...`:
///
/// ```text
///   driver_y = -|Proj_{sigma'K}(phi y - z)|^2 / y + |z|^2 / y
///              - [(sum v_i/(y+v_i) y_i lambda p_i + b)^+]^2
///                / sum y_i^2/(y+v_i) lambda p_i
///              + sum v_i^2/(y+v_i) lambda p_i
/// ```
pub fn driver_y(
    y: f64,
    diffusion: &DVector<f64>,
    jumps: &[f64],
    inputs: &DriverInputs,
) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::positivity("driver", format!("value {y} <= 0")));
    }
    let w = inputs.coeffs.phi() * y - diffusion;
    let proj = project_cone(&w, &inputs.coeffs.sigma, inputs.cone)?;
    let mut total = (diffusion.norm_squared() - proj.xi.norm_squared()) / y;

    let lambda = inputs.insurance.lambda;
    if lambda > 0.0 {
        if jumps.len() != inputs.claims.len() {
            return Err(Error::invalid("driver", "jump component count"));
        }
        let mut num = inputs.insurance.retention_premium();
        let mut den = 0.0;
        for (atom, &v) in inputs.claims.atoms().iter().zip(jumps) {
            let level = y + v;
            if !(level > 0.0) {
                return Err(Error::positivity(
                    "driver",
                    format!("value + jump = {level} at atom {}", atom.size),
                ));
            }
            num += v / level * atom.size * lambda * atom.prob;
            den += atom.size * atom.size / level * lambda * atom.prob;
            total += v * v / level * lambda * atom.prob;
        }
        let pos = num.max(0.0);
        total -= pos * pos / den;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimAtom;
    use crate::market::{CoefficientField, MarketModel, Piecewise, RateSchedule};
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    struct Fixture {
        market: MarketModel,
        cone: ConeConstraint,
        claims: ClaimDistribution,
        insurance: InsuranceParams,
    }

    impl Fixture {
        fn inputs<'a>(&'a self, coeffs: &'a Coefficients) -> DriverInputs<'a> {
            DriverInputs {
                coeffs,
                cone: &self.cone,
                claims: &self.claims,
                insurance: &self.insurance,
            }
        }
    }

    fn fixture(mu: &[f64], sigma: (usize, usize, &[f64]), lambda: f64, cone: ConeConstraint) -> Fixture {
        let claims = ClaimDistribution::new(
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
        .unwrap();
        let insurance = InsuranceParams::new(lambda, 0.2, 0.3, &claims).unwrap();
        let market = MarketModel::new(
            RateSchedule::constant(0.02, 1.0).unwrap(),
            CoefficientField::Deterministic {
                mu: Piecewise::constant(DVector::from_row_slice(mu)),
                sigma: Piecewise::constant(DMatrix::from_row_slice(sigma.0, sigma.1, sigma.2)),
            },
            1e-10,
        )
        .unwrap();
        Fixture {
            market,
            cone,
            claims,
            insurance,
        }
    }

    #[test]
    fn zero_market_zero_claims_driver_vanishes() {
        let fx = fixture(&[0.0], (1, 1, &[0.5]), 0.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let d = driver_p(1.0, &DVector::zeros(1), &[0.0, 0.0], &inputs).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn unconstrained_driver_closed_form() {
        let fx = fixture(
            &[0.3, -0.1],
            (2, 3, &[0.4, 0.1, 0.0, -0.05, 0.3, 0.2]),
            2.0,
            ConeConstraint::unconstrained(2).unwrap(),
        );
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let p = 0.8;
        let delta = DVector::from_row_slice(&[0.1, -0.2, 0.05]);
        let jumps = [0.1, -0.05];

        // projection onto the full row space: xi = sigma'(sigma sigma')^{-1} sigma v
        let v = coeffs.phi() + &delta / p;
        let gram = &coeffs.sigma * coeffs.sigma.transpose();
        let xi = coeffs.sigma.transpose() * gram.try_inverse().unwrap() * &coeffs.sigma * &v;
        let b = fx.insurance.retention_premium();
        let lambda = fx.insurance.lambda;
        let mut num = p * b;
        let mut den = 0.0;
        for (atom, g) in fx.claims.atoms().iter().zip(jumps.iter()) {
            num -= g * atom.size * lambda * atom.prob;
            den += (p + g) * atom.size * atom.size * lambda * atom.prob;
        }
        let expect = -p * xi.norm_squared() - num.max(0.0).powi(2) / den;

        let got = driver_p(p, &delta, &jumps, &inputs).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn orthant_driver_matches_grid_search() {
        let fx = fixture(
            &[0.3, -0.2],
            (2, 2, &[0.5, 0.0, 0.0, 0.4]),
            2.0,
            ConeConstraint::nonnegative(2).unwrap(),
        );
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let p = 1.3;
        let delta = DVector::from_row_slice(&[0.2, 0.1]);
        let jumps = [0.0, 0.0];
        let got = driver_p(p, &delta, &jumps, &inputs).unwrap();

        // brute force over pi >= 0
        let mut best = f64::INFINITY;
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let pi = DVector::from_row_slice(&[i as f64 * 4.0 / n as f64, j as f64 * 4.0 / n as f64]);
                let spi = coeffs.sigma.transpose() * &pi;
                let val = p * spi.norm_squared()
                    - 2.0 * pi.dot(&(&coeffs.mu * p + &coeffs.sigma * &delta));
                best = best.min(val);
            }
        }
        let jump_part = g2_star(p, &jumps, &inputs).unwrap();
        assert!(
            (got - (best + jump_part)).abs() < 2e-4,
            "{got} vs grid {}",
            best + jump_part
        );
    }

    #[test]
    fn g2_star_single_atom_formula_and_homogeneity() {
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        let insurance = InsuranceParams::new(1.5, 0.2, 0.3, &claims).unwrap();
        let market = MarketModel::new(
            RateSchedule::constant(0.0, 1.0).unwrap(),
            CoefficientField::Deterministic {
                mu: Piecewise::constant(DVector::from_row_slice(&[0.0])),
                sigma: Piecewise::constant(DMatrix::from_row_slice(1, 1, &[1.0])),
            },
            1e-10,
        )
        .unwrap();
        let cone = ConeConstraint::unconstrained(1).unwrap();
        let coeffs = market.coefficients_at(0.0, None).unwrap();
        let inputs = DriverInputs {
            coeffs: &coeffs,
            cone: &cone,
            claims: &claims,
            insurance: &insurance,
        };
        let (p, gamma) = (1.2, -0.3);
        let b = insurance.retention_premium();
        let lambda = insurance.lambda;
        let expect = -((p * b - gamma * lambda).max(0.0)).powi(2) / ((p + gamma) * lambda);
        let got = g2_star(p, &[gamma], &inputs).unwrap();
        assert!((got - expect).abs() < 1e-14);

        for c in [0.5, 2.0, 7.0] {
            let scaled = g2_star(c * p, &[c * gamma], &inputs).unwrap();
            assert!((scaled - c * got).abs() < 1e-12);
        }

        // strongly negative numerator clips to zero
        let clipped = g2_star(0.1, &[2.0], &inputs).unwrap();
        assert_eq!(clipped, 0.0);
    }

    #[test]
    fn g1_at_zero_is_zero_and_zero_jumps_pin_minimum() {
        let fx = fixture(&[0.2], (1, 1, &[0.4]), 2.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        assert_eq!(g1(0.0, 1.0, &[0.0, 0.0], 1.0, &[0.0, 0.0], &inputs), 0.0);
        let (rho1, g1s) = minimize_g1(1.0, &[0.0, 0.0], 1.0, &[0.0, 0.0], &inputs).unwrap();
        assert_eq!(rho1, 0.0);
        assert_eq!(g1s, 0.0);
    }

    #[test]
    fn minimize_g1_matches_grid_search() {
        let fx = fixture(&[0.2], (1, 1, &[0.4]), 2.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let mut rng = StdRng::seed_from_u64(20);
        for _ in 0..200 {
            let p1: f64 = rng.gen_range(0.1..3.0);
            let p2: f64 = rng.gen_range(0.1..3.0);
            let j1: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9 * p1..2.0)).collect();
            let j2: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9 * p2..2.0)).collect();
            let (rho1, g1s) = minimize_g1(p1, &j1, p2, &j2, &inputs).unwrap();

            let u_hi = 2.0 / fx.claims.min_atom_size();
            let steps = (u_hi / 1e-4) as usize;
            let mut best = (0.0, 0.0);
            for k in 0..=steps {
                let u = k as f64 * 1e-4;
                let val = g1(u, p1, &j1, p2, &j2, &inputs);
                if val < best.1 {
                    best = (u, val);
                }
            }
            assert!(
                (g1s - best.1).abs() < 2e-4,
                "minimum value {g1s} vs grid {}",
                best.1
            );
            assert!((rho1 - best.0).abs() < 2e-4, "argmin {rho1} vs grid {}", best.0);
            assert!(g1s <= 1e-12, "G1* must be <= 0, got {g1s}");
        }
    }

    #[test]
    fn g1_is_convex_on_random_inputs() {
        let fx = fixture(&[0.2], (1, 1, &[0.4]), 2.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..500 {
            let p1: f64 = rng.gen_range(0.1..3.0);
            let p2: f64 = rng.gen_range(0.1..3.0);
            let j1: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9 * p1..1.0)).collect();
            let j2: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9 * p2..1.0)).collect();
            let a: f64 = rng.gen_range(0.0..4.0);
            let b: f64 = rng.gen_range(0.0..4.0);
            let mid = 0.5 * (a + b);
            let lhs = g1(mid, p1, &j1, p2, &j2, &inputs);
            let rhs = 0.5 * g1(a, p1, &j1, p2, &j2, &inputs) + 0.5 * g1(b, p1, &j1, p2, &j2, &inputs);
            assert!(lhs <= rhs + 1e-10, "convexity violated: {lhs} > {rhs}");
        }
    }

    /// The reciprocal-weight driver must agree with the Ito transform of the
    /// monotone-weight driver: with y = 1/p, z = -delta/p^2,
    /// v_i = 1/(p+gamma_i) - 1/p,
    ///
    ///   driver_y(y,z,v) = (driver_p(p,delta,gamma) + lambda sum gamma_i p_i)/p^2
    ///                     + |delta|^2/p^3 + lambda sum v_i p_i.
    #[test]
    fn driver_y_equals_ito_transformed_driver_p() {
        let mut rng = StdRng::seed_from_u64(22);
        let cones = [
            ConeConstraint::unconstrained(2).unwrap(),
            ConeConstraint::nonnegative(2).unwrap(),
            ConeConstraint::halfspaces(DMatrix::from_row_slice(1, 2, &[1.0, -0.5])).unwrap(),
        ];
        for trial in 0..1000 {
            let cone = cones[trial % cones.len()].clone();
            let mu: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let mut sig = vec![0.0; 6];
            for s in sig.iter_mut() {
                *s = rng.gen_range(-0.5..0.5);
            }
            // keep the Gram matrix well conditioned
            sig[0] += 1.0;
            sig[4] += 1.0;
            let fx = fixture(&mu, (2, 3, &sig), 2.0, cone);
            let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
            let inputs = fx.inputs(&coeffs);

            let p: f64 = rng.gen_range(0.2..3.0);
            let delta = DVector::from_fn(3, |_, _| rng.gen_range(-0.8..0.8));
            let gamma: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9 * p..2.0)).collect();

            let y = 1.0 / p;
            let z = -&delta / (p * p);
            let v: Vec<f64> = gamma.iter().map(|g| 1.0 / (p + g) - 1.0 / p).collect();

            let lhs = driver_y(y, &z, &v, &inputs).unwrap();
            let dp = driver_p(p, &delta, &gamma, &inputs).unwrap();
            let lambda = fx.insurance.lambda;
            let comp_gamma: f64 = fx
                .claims
                .atoms()
                .iter()
                .zip(gamma.iter())
                .map(|(a, g)| g * a.prob)
                .sum::<f64>()
                * lambda;
            let comp_v: f64 = fx
                .claims
                .atoms()
                .iter()
                .zip(v.iter())
                .map(|(a, vi)| vi * a.prob)
                .sum::<f64>()
                * lambda;
            let rhs = (dp + comp_gamma) / (p * p) + delta.norm_squared() / (p * p * p) + comp_v;
            assert!(
                (lhs - rhs).abs() < 1e-9,
                "trial {trial}: driver_y {lhs} vs transformed {rhs}"
            );
        }
    }

    #[test]
    fn driver_y_unconstrained_no_claims_closed_form() {
        let fx = fixture(&[0.3], (1, 1, &[0.6]), 0.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        let (y, z) = (1.4, DVector::from_row_slice(&[0.2]));
        let w = coeffs.phi() * y - &z;
        let expect = (z.norm_squared() - w.norm_squared()) / y;
        let got = driver_y(y, &z, &[], &inputs).unwrap();
        assert!((got - expect).abs() < 1e-13);
    }

    #[test]
    fn drivers_reject_nonpositive_values() {
        let fx = fixture(&[0.2], (1, 1, &[0.4]), 2.0, ConeConstraint::unconstrained(1).unwrap());
        let coeffs = fx.market.coefficients_at(0.0, None).unwrap();
        let inputs = fx.inputs(&coeffs);
        assert!(driver_p(0.0, &DVector::zeros(1), &[0.0, 0.0], &inputs).is_err());
        assert!(driver_p(1.0, &DVector::zeros(1), &[-1.0, 0.0], &inputs).is_err());
        assert!(driver_y(-0.5, &DVector::zeros(1), &[0.0, 0.0], &inputs).is_err());
    }
}
