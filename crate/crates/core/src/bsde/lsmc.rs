//! Least-squares regression solver for factor-driven backward equations.
//!
//! Forward pass: factor paths under the physical dynamics (mean reversion,
//! shared Brownian noise, claim-response jumps), one independent stream per
//! path. Backward pass: function iteration that keeps every time slice a
//! polynomial in the standardized factor state,
//!
//! ```text
//!   c      = fit of  p_{k+1}(F_{k+1})        on basis(F_k)   (value)
//!   delta  = fit of  centered p_{k+1} dW/dt  on basis(F_k)   (diffusion)
//!   g      = fit of  driver(t_k, F_k, c, delta, jumps of c)  on basis(F_k)
//!   p_k    = c + dt * g                                      (coefficient sum)
//! ```
//!
//! Jump components are read off the fitted polynomial itself, `Gamma_i(F) =
//! c(F + response * y_i) - c(F)`, so a zero response gives exactly zero
//! jumps. Evaluations are clamped below at a positivity floor; the clamp
//! rate is reported on the solution and a high rate signals an
//! under-resolved fit rather than a recoverable condition.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::claims::sample_claim_schedule;
use crate::error::{Error, Result};
use crate::market::Model;

use super::drivers::{driver_p, driver_p1_full, driver_p2_full, driver_y, DriverInputs};
use super::{BsdeSolution, Equation, SolutionData, SolutionSlice};

#[derive(Debug, Clone)]
pub struct LsmcParams {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Polynomial degree of the regression basis (at most 2).
    pub degree: usize,
    /// Tikhonov weight on the normal equations, scale-free because the
    /// basis is standardized per step.
    pub ridge: f64,
    /// Positivity floor applied to every value evaluation.
    pub floor: f64,
}

impl Default for LsmcParams {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 50,
            seed: 0x5eed,
            degree: 2,
            ridge: 1e-8,
            floor: 1e-6,
        }
    }
}

/// Regression slice at one grid node.
#[derive(Debug, Clone)]
pub struct LsmcStep {
    pub shift: DVector<f64>,
    pub scale: DVector<f64>,
    pub degree: usize,
    pub value_coef: DVector<f64>,
    /// `n_basis x n_brownian`.
    pub diffusion_coef: DMatrix<f64>,
}

impl LsmcStep {
    fn standardized(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(f.len(), |i, _| (f[i] - self.shift[i]) / self.scale[i])
    }

    fn raw_value(&self, f: &DVector<f64>) -> f64 {
        basis_vec(&self.standardized(f), self.degree).dot(&self.value_coef)
    }

    fn diffusion_at(&self, f: &DVector<f64>) -> DVector<f64> {
        self.diffusion_coef.tr_mul(&basis_vec(&self.standardized(f), self.degree))
    }
}

/// Full regression-backed solution data.
#[derive(Debug, Clone)]
pub struct LsmcData {
    pub steps: Vec<LsmcStep>,
    pub jump_response: DVector<f64>,
    pub atom_sizes: Vec<f64>,
    pub floor: f64,
    pub n_brownian: usize,
}

impl LsmcData {
    pub(crate) fn eval_node(
        &self,
        k: usize,
        factor: Option<&DVector<f64>>,
    ) -> Result<SolutionSlice> {
        let f = factor.ok_or_else(|| {
            Error::invalid("solution", "factor state required for regression solution")
        })?;
        let step = &self.steps[k];
        let value = step.raw_value(f).max(self.floor);
        let diffusion = step.diffusion_at(f);
        let zero_response = self.jump_response.iter().all(|v| *v == 0.0);
        let jumps = self
            .atom_sizes
            .iter()
            .map(|&y| {
                if zero_response {
                    0.0
                } else {
                    let shifted = f + &self.jump_response * y;
                    step.raw_value(&shifted).max(self.floor) - value
                }
            })
            .collect();
        Ok(SolutionSlice {
            value,
            diffusion,
            jumps,
        })
    }
}

fn n_basis(d: usize, degree: usize) -> usize {
    match degree {
        0 => 1,
        1 => 1 + d,
        _ => 1 + d + d * (d + 1) / 2,
    }
}

fn basis_vec(z: &DVector<f64>, degree: usize) -> DVector<f64> {
    let d = z.len();
    let mut b = Vec::with_capacity(n_basis(d, degree));
    b.push(1.0);
    if degree >= 1 {
        b.extend(z.iter());
    }
    if degree >= 2 {
        for i in 0..d {
            for j in i..d {
                b.push(z[i] * z[j]);
            }
        }
    }
    DVector::from_vec(b)
}

struct ForwardPaths {
    /// `[path][node][coord]` flattened.
    factors: Vec<f64>,
    /// `[path][step][brownian]` flattened.
    increments: Vec<f64>,
    d: usize,
    n_w: usize,
    n_nodes: usize,
}

impl ForwardPaths {
    fn factor(&self, path: usize, node: usize) -> DVector<f64> {
        let base = (path * self.n_nodes + node) * self.d;
        DVector::from_column_slice(&self.factors[base..base + self.d])
    }

    fn increment(&self, path: usize, step: usize) -> DVector<f64> {
        let base = (path * (self.n_nodes - 1) + step) * self.n_w;
        DVector::from_column_slice(&self.increments[base..base + self.n_w])
    }
}

fn simulate_factor_paths(model: &Model, params: &LsmcParams) -> Result<ForwardPaths> {
    let fm = model
        .market
        .factor()
        .ok_or_else(|| Error::invalid("lsmc", "regression solver needs a factor model"))?;
    let d = fm.dim();
    let n_w = model.market.n_brownian();
    let n = params.n_steps;
    let horizon = model.market.horizon();
    let dt = horizon / n as f64;
    let sqrt_dt = dt.sqrt();
    let lambda = model.insurance.lambda;

    let mut factors = vec![0.0; params.n_paths * (n + 1) * d];
    let mut increments = vec![0.0; params.n_paths * n * n_w];

    for path in 0..params.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(path as u64 + 1);
        let schedule = sample_claim_schedule(&mut rng, lambda, horizon, &model.claims);
        let mut cursor = 0;
        let mut f = fm.initial.clone();
        factors[(path * (n + 1)) * d..(path * (n + 1) + 1) * d]
            .copy_from_slice(f.as_slice());
        for k in 0..n {
            let t_next = horizon * (k + 1) as f64 / n as f64;
            let mut dw = DVector::zeros(n_w);
            for l in 0..n_w {
                let z: f64 = rng.sample(StandardNormal);
                dw[l] = z * sqrt_dt;
            }
            let base = (path * n + k) * n_w;
            increments[base..base + n_w].copy_from_slice(dw.as_slice());
            f += fm.drift(&f) * dt + &fm.diffusion * &dw;
            while cursor < schedule.len() && schedule[cursor].time <= t_next {
                let y = model.claims.atoms()[schedule[cursor].atom].size;
                f = fm.jump_shift(&f, y);
                cursor += 1;
            }
            let out = (path * (n + 1) + k + 1) * d;
            factors[out..out + d].copy_from_slice(f.as_slice());
        }
    }

    Ok(ForwardPaths {
        factors,
        increments,
        d,
        n_w,
        n_nodes: n + 1,
    })
}

struct EvalStats {
    clamped: u64,
    total: u64,
    lo: f64,
    hi: f64,
}

impl EvalStats {
    fn new() -> Self {
        Self {
            clamped: 0,
            total: 0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, raw: f64, floor: f64) -> f64 {
        self.total += 1;
        let v = if raw < floor {
            self.clamped += 1;
            floor
        } else {
            raw
        };
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
        v
    }

    fn merge(&mut self, other: &EvalStats) {
        self.clamped += other.clamped;
        self.total += other.total;
        self.lo = self.lo.min(other.lo);
        self.hi = self.hi.max(other.hi);
    }
}

/// Solves one factor-driven backward equation by regression.
///
/// `companion` carries the below-target solution when `equation` is `P1`
/// (its retention objective couples the two weights); it must sit on the
/// same grid. All other equations take no companion.
pub fn solve_lsmc(
    equation: Equation,
    model: &Model,
    params: &LsmcParams,
    companion: Option<&BsdeSolution>,
) -> Result<BsdeSolution> {
    let fm = model
        .market
        .factor()
        .ok_or_else(|| Error::invalid("lsmc", "regression solver needs a factor model"))?;
    if params.n_steps == 0 {
        return Err(Error::invalid("lsmc", "need at least one step"));
    }
    if params.degree > 2 {
        return Err(Error::invalid("lsmc", "basis degree capped at 2"));
    }
    if !(params.floor > 0.0) {
        return Err(Error::invalid("lsmc", "positivity floor must be positive"));
    }
    let d = fm.dim();
    let nb_max = n_basis(d, params.degree);
    if params.n_paths < 4 * nb_max {
        return Err(Error::invalid(
            "lsmc",
            format!("{} paths cannot support {} basis functions", params.n_paths, nb_max),
        ));
    }
    match (equation, companion) {
        (Equation::P1, Some(c)) => {
            if c.equation() != Equation::P2 {
                return Err(Error::invalid("lsmc", "companion must be a P2 solution"));
            }
            if c.grid().len() != params.n_steps + 1
                || (c.horizon() - model.market.horizon()).abs()
                    > 1e-9 * model.market.horizon().max(1.0)
            {
                return Err(Error::invalid("lsmc", "companion grid mismatch"));
            }
        }
        (Equation::P1, None) => {
            return Err(Error::invalid(
                "lsmc",
                "above-target equation needs the below-target solution",
            ))
        }
        (_, Some(_)) => {
            return Err(Error::invalid("lsmc", "companion only applies to P1"));
        }
        _ => {}
    }

    let horizon = model.market.horizon();
    let n = params.n_steps;
    let dt = horizon / n as f64;
    let n_w = model.market.n_brownian();
    let paths = simulate_factor_paths(model, params)?;
    let atom_sizes: Vec<f64> = model.claims.atoms().iter().map(|a| a.size).collect();
    let zero_response = !fm.has_jump_response();

    let terminal = LsmcStep {
        shift: DVector::zeros(d),
        scale: DVector::from_element(d, 1.0),
        degree: params.degree,
        value_coef: {
            let mut c = DVector::zeros(n_basis(d, params.degree));
            c[0] = 1.0;
            c
        },
        diffusion_coef: DMatrix::zeros(n_basis(d, params.degree), n_w),
    };
    let mut steps: Vec<Option<LsmcStep>> = vec![None; n + 1];
    steps[n] = Some(terminal);
    let mut stats = EvalStats::new();
    let floor = params.floor;

    for k in (0..n).rev() {
        let t_k = horizon * k as f64 / n as f64;
        let next = steps[k + 1].as_ref().unwrap();

        // per-step standardization of the regression states
        let mut shift = DVector::<f64>::zeros(d);
        let mut scale = DVector::<f64>::zeros(d);
        for j in 0..params.n_paths {
            let f = paths.factor(j, k);
            shift += &f;
        }
        shift /= params.n_paths as f64;
        for j in 0..params.n_paths {
            let f = paths.factor(j, k);
            for i in 0..d {
                scale[i] += (f[i] - shift[i]).powi(2);
            }
        }
        for i in 0..d {
            scale[i] = (scale[i] / params.n_paths as f64).sqrt().max(1e-8);
        }

        // value targets through the next slice's polynomial
        let mut v = DVector::zeros(params.n_paths);
        for j in 0..params.n_paths {
            let f_next = paths.factor(j, k + 1);
            v[j] = stats.record(next.raw_value(&f_next), floor);
        }
        let v_mean = v.mean();

        // basis matrix with degree reduction on a failed factorization
        let mut chosen: Option<(usize, DMatrix<f64>, Cholesky<f64, nalgebra::Dyn>)> = None;
        let mut degree = params.degree;
        loop {
            let nb = n_basis(d, degree);
            let mut b = DMatrix::zeros(params.n_paths, nb);
            for j in 0..params.n_paths {
                let f = paths.factor(j, k);
                let z = DVector::from_fn(d, |i, _| (f[i] - shift[i]) / scale[i]);
                b.row_mut(j).copy_from(&basis_vec(&z, degree).transpose());
            }
            let mut gram = b.tr_mul(&b) / params.n_paths as f64;
            for i in 0..nb {
                gram[(i, i)] += params.ridge;
            }
            match Cholesky::new(gram) {
                Some(c) => {
                    chosen = Some((degree, b, c));
                    break;
                }
                None if degree > 0 => degree -= 1,
                None => break,
            }
        }
        let (degree, b, chol) = chosen.ok_or_else(|| {
            Error::Regression(format!(
                "normal equations not positive definite at any degree (step {k})"
            ))
        })?;
        let nb = n_basis(d, degree);

        let solve = |rhs: &DVector<f64>| -> DVector<f64> {
            chol.solve(&(b.tr_mul(rhs) / params.n_paths as f64))
        };

        let value_fit = solve(&v);
        let mut diffusion_coef = DMatrix::zeros(nb, n_w);
        for l in 0..n_w {
            let mut target = DVector::zeros(params.n_paths);
            for j in 0..params.n_paths {
                target[j] = (v[j] - v_mean) * paths.increment(j, k)[l] / dt;
            }
            diffusion_coef.set_column(l, &solve(&target));
        }

        let fitted = LsmcStep {
            shift: shift.clone(),
            scale: scale.clone(),
            degree,
            value_coef: value_fit.clone(),
            diffusion_coef: diffusion_coef.clone(),
        };

        // pathwise driver values through the fitted slice
        let path_stats: Vec<(f64, EvalStats)> = (0..params.n_paths)
            .into_par_iter()
            .map(|j| -> Result<(f64, EvalStats)> {
                let mut local = EvalStats::new();
                let f = paths.factor(j, k);
                let value = local.record(fitted.raw_value(&f), floor);
                let diffusion = fitted.diffusion_at(&f);
                let jumps: Vec<f64> = atom_sizes
                    .iter()
                    .map(|&y| {
                        if zero_response {
                            0.0
                        } else {
                            let shifted = fm.jump_shift(&f, y);
                            local.record(fitted.raw_value(&shifted), floor) - value
                        }
                    })
                    .collect();
                let coeffs = model.market.coefficients_at(t_k, Some(&f))?;
                let inputs = DriverInputs {
                    coeffs: &coeffs,
                    cone: &model.cone,
                    claims: &model.claims,
                    insurance: &model.insurance,
                };
                let rate = match equation {
                    Equation::P => driver_p(value, &diffusion, &jumps, &inputs)?,
                    Equation::P2 => driver_p2_full(value, &diffusion, &jumps, &inputs)?,
                    Equation::Y => -driver_y(value, &diffusion, &jumps, &inputs)?,
                    Equation::P1 => {
                        let p2 = companion.unwrap().eval_node(k, Some(&f))?;
                        driver_p1_full(value, &diffusion, &jumps, p2.value, &p2.jumps, &inputs)?
                    }
                };
                Ok((rate, local))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut driver_vals = DVector::zeros(params.n_paths);
        for (j, (rate, local)) in path_stats.iter().enumerate() {
            driver_vals[j] = *rate;
            stats.merge(local);
        }
        let driver_fit = solve(&driver_vals);

        steps[k] = Some(LsmcStep {
            value_coef: value_fit + driver_fit * dt,
            ..fitted
        });
    }

    let steps: Vec<LsmcStep> = steps.into_iter().map(Option::unwrap).collect();
    // fold the reachable initial evaluation into the certificates
    stats.record(steps[0].raw_value(&fm.initial), floor);

    let grid: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    let clamp_rate = stats.clamped as f64 / stats.total as f64;
    let data = LsmcData {
        steps,
        jump_response: fm.jump_response.clone(),
        atom_sizes,
        floor,
        n_brownian: n_w,
    };
    BsdeSolution::new(
        equation,
        grid,
        SolutionData::Lsmc(data),
        stats.lo.min(1.0),
        stats.hi.max(1.0),
        clamp_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimDistribution;
    use crate::cone::ConeConstraint;
    use crate::insurance::InsuranceParams;
    use crate::market::{CoefficientField, FactorModel, MarketModel, RateSchedule};

    fn factor_model(noise: f64, jump_response: f64) -> FactorModel {
        FactorModel {
            initial: DVector::from_element(1, 0.0),
            mean_reversion: DVector::from_element(1, 0.8),
            long_run_mean: DVector::from_element(1, 0.0),
            diffusion: DMatrix::from_element(1, 1, noise),
            jump_response: DVector::from_element(1, jump_response),
            mu_base: DVector::from_element(1, 0.06),
            mu_loading: DMatrix::from_element(1, 1, if noise > 0.0 { 0.05 } else { 0.0 }),
            mu_amplitude: if noise > 0.0 { 0.04 } else { 0.0 },
            sigma_base: DMatrix::from_element(1, 1, 0.2),
            sigma_loading: DVector::from_element(1, if noise > 0.0 { 0.5 } else { 0.0 }),
            sigma_amplitude: if noise > 0.0 { 0.3 } else { 0.0 },
        }
    }

    fn factor_test_model(noise: f64, jump_response: f64) -> Model {
        let rates = RateSchedule::constant(0.03, 1.0).unwrap();
        let market = MarketModel::new(
            rates,
            CoefficientField::Factor(factor_model(noise, jump_response)),
            1e-6,
        )
        .unwrap();
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        let insurance = InsuranceParams::new(2.0, 0.25, 0.3, &claims).unwrap();
        Model::new(market, insurance, claims, ConeConstraint::unconstrained(1).unwrap()).unwrap()
    }

    fn params(n_paths: usize, n_steps: usize) -> LsmcParams {
        LsmcParams {
            n_paths,
            n_steps,
            seed: 77,
            ..LsmcParams::default()
        }
    }

    #[test]
    fn degenerate_factor_recovers_scalar_ode() {
        // no factor noise, flat maps: every path is the same point and the
        // scheme collapses to explicit Euler on the scalar equation
        let model = factor_test_model(0.0, 0.0);
        let sol = solve_lsmc(Equation::P, &model, &params(64, 64), None).unwrap();
        let coeffs = model.market.coefficients_at(0.0, Some(&DVector::zeros(1))).unwrap();
        let rate = {
            let b = model.insurance.retention_premium();
            coeffs.phi().norm_squared()
                + b * b / (model.insurance.lambda * model.claims.second_moment())
        };
        let horizon = model.market.horizon();
        for &t in &[0.0, 0.25, 0.5, 1.0] {
            let exact = (-rate * (horizon - t)).exp();
            let got = sol.value_at(t, Some(&DVector::zeros(1))).unwrap();
            assert!(
                (got - exact).abs() < 2e-3 * exact,
                "t={t}: {got} vs {exact}"
            );
        }
        assert_eq!(sol.clamp_rate(), 0.0);
    }

    #[test]
    fn zero_jump_response_gives_exactly_zero_jumps() {
        let model = factor_test_model(0.4, 0.0);
        let sol = solve_lsmc(Equation::P, &model, &params(512, 16), None).unwrap();
        for k in 0..sol.grid().len() {
            let slice = sol.eval_node(k, Some(&DVector::from_element(1, 0.3))).unwrap();
            assert!(slice.jumps.iter().all(|j| *j == 0.0));
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let model = factor_test_model(0.4, 0.2);
        let a = solve_lsmc(Equation::P2, &model, &params(512, 16), None).unwrap();
        let b = solve_lsmc(Equation::P2, &model, &params(512, 16), None).unwrap();
        let f = DVector::from_element(1, -0.7);
        for k in 0..a.grid().len() {
            let sa = a.eval_node(k, Some(&f)).unwrap();
            let sb = b.eval_node(k, Some(&f)).unwrap();
            assert_eq!(sa.value, sb.value);
            assert_eq!(sa.diffusion, sb.diffusion);
            assert_eq!(sa.jumps, sb.jumps);
        }
    }

    #[test]
    fn noisy_factor_solution_is_sane() {
        let model = factor_test_model(0.4, 0.15);
        let sol = solve_lsmc(Equation::P, &model, &params(2000, 25), None).unwrap();
        let (lo, hi) = sol.certificates();
        assert!(lo > 0.0 && hi < 10.0);
        assert!(sol.clamp_rate() < 1e-3);
        let v0 = sol.value_at(0.0, Some(&DVector::zeros(1))).unwrap();
        // monotone weight shrinks backwards from 1
        assert!(v0 > 0.3 && v0 < 1.0);
    }

    #[test]
    fn p1_requires_matching_companion() {
        let model = factor_test_model(0.4, 0.0);
        let p = params(512, 16);
        assert!(solve_lsmc(Equation::P1, &model, &p, None).is_err());
        let p2 = solve_lsmc(Equation::P2, &model, &p, None).unwrap();
        let p1 = solve_lsmc(Equation::P1, &model, &p, Some(&p2)).unwrap();
        assert_eq!(p1.equation(), Equation::P1);
        // wrong-equation companion is rejected
        assert!(solve_lsmc(Equation::P1, &model, &p, Some(&p1)).is_err());
        // companion on a different grid is rejected
        let p2_coarse = solve_lsmc(Equation::P2, &model, &params(512, 8), None).unwrap();
        assert!(solve_lsmc(Equation::P1, &model, &p, Some(&p2_coarse)).is_err());
    }
}
