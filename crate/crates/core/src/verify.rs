//! Monte Carlo estimation of the two objectives and simulation-based
//! verification: the pathwise budget identity, saddle inequalities, and
//! density admissibility.
//!
//! Tilted-measure expectations are always computed by reweighting under the
//! physical measure (`E^tilted[xi] = E[density_T * xi]`), so one path set
//! serves every kernel and the density is exercised directly.
//!
//! Estimates are reproducible bit for bit: paths are folded in fixed blocks
//! of consecutive samples, blocks are reduced in index order, and the RNG
//! stream of a path depends only on (seed, path index). Worker count never
//! changes a number. With antithetic pairing a statistical sample is the
//! average of the two mirrored paths, which keeps samples independent and
//! standard errors honest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::BsdeSolution;
use crate::error::{Error, Result};
use crate::market::Model;
use crate::simulate::PathEngine;
use crate::strategy::{self, CompiledKernel, DensityKernel, Strategy};

/// Samples folded per parallel block; fixed so reductions are deterministic.
const BLOCK: usize = 1024;

/// Side information captured alongside an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Fraction of steps where the feedback multiplier clamped at zero.
    pub clamp_rate: f64,
    pub mean_density: f64,
    pub density_std_error: f64,
    pub density_second_moment: f64,
    pub mean_terminal_wealth: f64,
    pub wealth_std_error: f64,
    pub mean_claims_per_path: f64,
    /// Largest pathwise budget-identity residual, when tracked.
    pub max_identity_residual: Option<f64>,
}

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Largest grid step of the simulation.
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Copy, Default)]
struct Accum {
    n: f64,
    w: f64,
    w2: f64,
    m1: f64,
    m2: f64,
    m1sq: f64,
    m2sq: f64,
    m1m2: f64,
    lam: f64,
    lamsq: f64,
    lam2: f64,
    resid: f64,
    resid2: f64,
    max_resid: f64,
    clamped: u64,
    steps: u64,
    claims: u64,
}

impl Accum {
    fn merge(&mut self, o: &Accum) {
        self.n += o.n;
        self.w += o.w;
        self.w2 += o.w2;
        self.m1 += o.m1;
        self.m2 += o.m2;
        self.m1sq += o.m1sq;
        self.m2sq += o.m2sq;
        self.m1m2 += o.m1m2;
        self.lam += o.lam;
        self.lamsq += o.lamsq;
        self.lam2 += o.lam2;
        self.resid += o.resid;
        self.resid2 += o.resid2;
        self.max_resid = self.max_resid.max(o.max_resid);
        self.clamped += o.clamped;
        self.steps += o.steps;
        self.claims += o.claims;
    }
}

/// Per-node context for the budget identity
/// `theta h_t Xs_t + Y_t L_t = theta h_0 xs_0 + Y_0`.
struct IdentityCtx<'a> {
    y: &'a BsdeSolution,
    theta: f64,
    budget: f64,
    discount: Vec<f64>,
    wealth_shift: Vec<f64>,
    /// Node values of Y when the model is deterministic.
    y_nodes: Option<Vec<f64>>,
}

impl<'a> IdentityCtx<'a> {
    fn new(engine: &PathEngine, y: &'a BsdeSolution, theta: f64) -> Result<Self> {
        let model = engine.model();
        let grid = engine.grid();
        let discount = grid
            .iter()
            .map(|&t| model.market.discount(t))
            .collect::<Result<Vec<_>>>()?;
        let wealth_shift = grid
            .iter()
            .map(|&t| model.shifted_wealth(t, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let y_nodes = if model.market.is_deterministic() {
            Some(
                grid.iter()
                    .map(|&t| y.value_at(t, None))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let y0 = y.value_at(0.0, strategy::initial_factor(model).as_ref())?;
        let budget = theta * discount[0] * (engine.initial_wealth() + wealth_shift[0]) + y0;
        Ok(Self {
            y,
            theta,
            budget,
            discount,
            wealth_shift,
            y_nodes,
        })
    }
}

/// Runs `path`, returning `(weight observable inputs, residual, stats)`.
fn sample_one(
    engine: &PathEngine,
    identity: Option<&IdentityCtx>,
    path: usize,
) -> Result<(f64, f64, f64, usize, usize)> {
    let mut worst = 0.0_f64;
    let mut node_err: Result<()> = Ok(());
    let stats = engine.run_with(path, |s| {
        let Some(ctx) = identity else { return };
        let y_t = match &ctx.y_nodes {
            Some(nodes) => nodes[s.k],
            None => match ctx.y.eval(s.t, s.factor) {
                Ok(slice) => slice.value,
                Err(e) => {
                    if node_err.is_ok() {
                        node_err = Err(e);
                    }
                    return;
                }
            },
        };
        let xs = s.wealth + ctx.wealth_shift[s.k];
        let resid = (ctx.theta * ctx.discount[s.k] * xs + y_t * s.density - ctx.budget).abs();
        worst = worst.max(resid);
    })?;
    node_err?;
    Ok((
        stats.terminal_wealth,
        stats.terminal_density,
        worst,
        stats.clamped_steps,
        stats.n_claims,
    ))
}

/// Folds all samples into one accumulator: fixed blocks in parallel, ordered
/// merge, sequential folds inside a block.
fn collect(
    engine: &PathEngine,
    theta: f64,
    n_paths: usize,
    identity: Option<&IdentityCtx>,
) -> Result<Accum> {
    if n_paths < 2 {
        return Err(Error::invalid("verify", "need at least 2 paths"));
    }
    let paths_per_sample = if engine.is_antithetic() { 2 } else { 1 };
    if n_paths % paths_per_sample != 0 {
        return Err(Error::invalid("verify", "antithetic runs need an even path count"));
    }
    let n_samples = n_paths / paths_per_sample;
    let steps_per_path = (engine.grid().len() - 1) as u64;
    let n_blocks = n_samples.div_ceil(BLOCK);
    let blocks = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let mut acc = Accum::default();
            let lo = blk * BLOCK;
            let hi = ((blk + 1) * BLOCK).min(n_samples);
            for sample in lo..hi {
                let mut x_bar = 0.0;
                let mut x2_bar = 0.0;
                let mut w_bar = 0.0;
                let mut lam_bar = 0.0;
                let mut lam2_bar = 0.0;
                let mut resid_bar = 0.0;
                for rep in 0..paths_per_sample {
                    let path = sample * paths_per_sample + rep;
                    let (x, lam, resid, clamped, claims) = sample_one(engine, identity, path)?;
                    let w = lam * (x + (lam - 1.0) / (2.0 * theta));
                    x_bar += x;
                    x2_bar += x * x;
                    w_bar += w;
                    lam_bar += lam;
                    lam2_bar += lam * lam;
                    resid_bar += resid;
                    acc.max_resid = acc.max_resid.max(resid);
                    acc.clamped += clamped as u64;
                    acc.claims += claims as u64;
                    acc.steps += steps_per_path;
                }
                let inv = 1.0 / paths_per_sample as f64;
                x_bar *= inv;
                x2_bar *= inv;
                w_bar *= inv;
                lam_bar *= inv;
                lam2_bar *= inv;
                resid_bar *= inv;
                acc.n += 1.0;
                acc.w += w_bar;
                acc.w2 += w_bar * w_bar;
                acc.m1 += x_bar;
                acc.m2 += x2_bar;
                acc.m1sq += x_bar * x_bar;
                acc.m2sq += x2_bar * x2_bar;
                acc.m1m2 += x_bar * x2_bar;
                acc.lam += lam_bar;
                acc.lamsq += lam_bar * lam_bar;
                acc.lam2 += lam2_bar;
                acc.resid += resid_bar;
                acc.resid2 += resid_bar * resid_bar;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Accum::default();
    for b in &blocks {
        total.merge(b);
    }
    Ok(total)
}

fn max_step(grid: &[f64]) -> f64 {
    grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn sample_se(n: f64, sum: f64, sum_sq: f64) -> f64 {
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (var / n).sqrt()
}

fn diagnostics(acc: &Accum, n_paths: usize) -> Diagnostics {
    let n = acc.n;
    Diagnostics {
        clamp_rate: acc.clamped as f64 / acc.steps.max(1) as f64,
        mean_density: acc.lam / n,
        density_std_error: sample_se(n, acc.lam, acc.lamsq),
        density_second_moment: acc.lam2 / n,
        mean_terminal_wealth: acc.m1 / n,
        wealth_std_error: sample_se(n, acc.m1, acc.m1sq),
        mean_claims_per_path: acc.claims as f64 / n_paths as f64,
        max_identity_residual: None,
    }
}

/// Estimates the monotone objective `E[L_T (X_T + (L_T - 1)/(2 theta))]`
/// by density reweighting. An engine without a kernel means the identity
/// tilt, reducing the estimate to `E[X_T]`.
pub fn estimate_mmv_objective(
    engine: &PathEngine,
    theta: f64,
    n_paths: usize,
) -> Result<EstimateReport> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid("verify", format!("theta {theta} must be > 0")));
    }
    let acc = collect(engine, theta, n_paths, None)?;
    let diag = diagnostics(&acc, n_paths);
    Ok(EstimateReport {
        estimate: acc.w / acc.n,
        std_error: sample_se(acc.n, acc.w, acc.w2),
        n_paths,
        dt: max_step(engine.grid()),
        seed: engine.seed(),
        antithetic: engine.is_antithetic(),
        diagnostics: diag,
    })
}

/// Estimates the classical objective `E[X_T] - theta/2 Var(X_T)` with a
/// delta-method standard error. The engine must carry no density kernel.
pub fn estimate_mv_objective(
    engine: &PathEngine,
    theta: f64,
    n_paths: usize,
) -> Result<EstimateReport> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid("verify", format!("theta {theta} must be > 0")));
    }
    if engine.has_kernel() {
        return Err(Error::invalid(
            "verify",
            "classical objective is estimated under the physical measure; drop the kernel",
        ));
    }
    let acc = collect(engine, theta, n_paths, None)?;
    let n = acc.n;
    let mu1 = acc.m1 / n;
    let mu2 = acc.m2 / n;
    let var = (mu2 - mu1 * mu1).max(0.0);
    let estimate = mu1 - 0.5 * theta * var;
    // delta method on g(mu1, mu2) = mu1 - theta/2 (mu2 - mu1^2) with the
    // sample covariance of the per-sample moment vector
    let g1 = 1.0 + theta * mu1;
    let g2 = -0.5 * theta;
    let c11 = (acc.m1sq / n - mu1 * mu1).max(0.0);
    let c22 = (acc.m2sq / n - mu2 * mu2).max(0.0);
    let c12 = acc.m1m2 / n - mu1 * mu2;
    let se = ((g1 * g1 * c11 + 2.0 * g1 * g2 * c12 + g2 * g2 * c22).max(0.0) / n).sqrt();
    let diag = diagnostics(&acc, n_paths);
    Ok(EstimateReport {
        estimate,
        std_error: se,
        n_paths,
        dt: max_step(engine.grid()),
        seed: engine.seed(),
        antithetic: engine.is_antithetic(),
        diagnostics: diag,
    })
}

/// Co-simulates the saddle pair and measures the budget identity
/// `theta h_t Xs_t + Y_t L_t - (theta h_0 xs_0 + Y_0)` at every node.
///
/// The estimate is the mean over samples of the per-path maximum residual;
/// `diagnostics.max_identity_residual` holds the global maximum.
pub fn check_identity(
    engine: &PathEngine,
    y: &BsdeSolution,
    theta: f64,
    n_paths: usize,
) -> Result<EstimateReport> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid("verify", format!("theta {theta} must be > 0")));
    }
    let ctx = IdentityCtx::new(engine, y, theta)?;
    let acc = collect(engine, theta, n_paths, Some(&ctx))?;
    let mut diag = diagnostics(&acc, n_paths);
    diag.max_identity_residual = Some(acc.max_resid);
    Ok(EstimateReport {
        estimate: acc.resid / acc.n,
        std_error: sample_se(acc.n, acc.resid, acc.resid2),
        n_paths,
        dt: max_step(engine.grid()),
        seed: engine.seed(),
        antithetic: engine.is_antithetic(),
        diagnostics: diag,
    })
}

/// One perturbation's verdict in a saddle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleOutcome {
    pub label: String,
    /// True for strategy perturbations (upper bound side), false for kernel
    /// perturbations (lower bound side).
    pub strategy_side: bool,
    pub estimate: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Saddle verification summary at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    /// Analytic optimal value the inequalities bracket.
    pub value: f64,
    pub n_paths: usize,
    pub outcomes: Vec<SaddleOutcome>,
    pub all_pass: bool,
}

/// Simulates every perturbation against the optimal opponent and checks the
/// saddle inequalities within `band` standard errors.
///
/// Strategy perturbations must come out at most `value + band * SE`;
/// kernel perturbations at least `value - band * SE`. All engines share the
/// seed, so every perturbation sees identical claims and Gaussians.
#[allow(clippy::too_many_arguments)]
pub fn check_saddle(
    model: &Model,
    y: &BsdeSolution,
    theta: f64,
    x0: f64,
    grid: &[f64],
    strategy_perturbations: &[(String, Strategy)],
    kernel_perturbations: &[(String, DensityKernel)],
    n_paths: usize,
    seed: u64,
    band: f64,
) -> Result<SaddleReport> {
    let value = strategy::monotone_value(model, y, theta, x0)?;
    let optimal = Strategy::monotone(model.clone(), y.clone(), theta, x0)?.compile(grid)?;
    let saddle_kernel = DensityKernel::saddle(model.clone(), y.clone())?.compile(grid)?;
    let mut outcomes = Vec::new();

    for (label, pert) in strategy_perturbations {
        let compiled = pert.compile(grid)?;
        let engine = PathEngine::new(model, &compiled, Some(&saddle_kernel), x0, seed, false)?;
        let report = estimate_mmv_objective(&engine, theta, n_paths)?;
        outcomes.push(SaddleOutcome {
            label: label.clone(),
            strategy_side: true,
            estimate: report.estimate,
            std_error: report.std_error,
            pass: report.estimate <= value + band * report.std_error,
        });
    }
    for (label, pert) in kernel_perturbations {
        let compiled: CompiledKernel = pert.compile(grid)?;
        let engine = PathEngine::new(model, &optimal, Some(&compiled), x0, seed, false)?;
        let report = estimate_mmv_objective(&engine, theta, n_paths)?;
        outcomes.push(SaddleOutcome {
            label: label.clone(),
            strategy_side: false,
            estimate: report.estimate,
            std_error: report.std_error,
            pass: report.estimate >= value - band * report.std_error,
        });
    }
    let all_pass = outcomes.iter().all(|o| o.pass);
    Ok(SaddleReport {
        value,
        n_paths,
        outcomes,
        all_pass,
    })
}

/// Stock perturbation family on the strategy side: scalings of the optimal
/// rule, the do-nothing strategy, constant retentions, and a shifted rule.
pub fn strategy_perturbation_library(
    model: &Model,
    y: &BsdeSolution,
    theta: f64,
    x0: f64,
) -> Result<Vec<(String, Strategy)>> {
    let base = || Strategy::monotone(model.clone(), y.clone(), theta, x0);
    let m = model.market.n_assets();
    let mut lib: Vec<(String, Strategy)> = vec![
        ("optimal".into(), base()?),
        ("zero".into(), Strategy::zero(m)),
        ("scaled-0.5".into(), Strategy::scaled(base()?, 0.5, 0.5)?),
        ("scaled-1.5".into(), Strategy::scaled(base()?, 1.5, 1.5)?),
        ("invest-half".into(), Strategy::scaled(base()?, 0.5, 1.0)?),
        ("retain-half".into(), Strategy::scaled(base()?, 1.0, 0.5)?),
        ("invest-double".into(), Strategy::scaled(base()?, 2.0, 1.0)?),
        ("retain-double".into(), Strategy::scaled(base()?, 1.0, 2.0)?),
        (
            "full-retention".into(),
            Strategy::constant(&model.cone, nalgebra::DVector::zeros(m), 1.0)?,
        ),
        (
            "half-retention".into(),
            Strategy::constant(&model.cone, nalgebra::DVector::zeros(m), 0.5)?,
        ),
    ];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5add1e);
    let member = model.cone.sample_member(&mut rng) * 0.1;
    lib.push((
        "const-invest".into(),
        Strategy::constant(&model.cone, member.clone(), 0.0)?,
    ));
    lib.push((
        "shifted".into(),
        Strategy::shifted(base()?, &model.cone, member, 0.05)?,
    ));
    Ok(lib)
}

/// Stock perturbation family on the kernel side: the identity tilt,
/// constant tilts, and scalings of the saddle tilt.
pub fn kernel_perturbation_library(
    model: &Model,
    y: &BsdeSolution,
) -> Result<Vec<(String, DensityKernel)>> {
    let saddle = || DensityKernel::saddle(model.clone(), y.clone());
    let n = model.market.n_brownian();
    let atoms = model.claims.len();
    let zeros_eta = nalgebra::DVector::zeros(n);
    Ok(vec![
        ("saddle".into(), saddle()?),
        (
            "identity".into(),
            DensityKernel::constant(zeros_eta.clone(), vec![0.0; atoms])?,
        ),
        (
            "drift-up".into(),
            DensityKernel::constant(nalgebra::DVector::from_element(n, 0.15), vec![0.0; atoms])?,
        ),
        (
            "drift-down".into(),
            DensityKernel::constant(nalgebra::DVector::from_element(n, -0.25), vec![0.0; atoms])?,
        ),
        (
            "claims-up".into(),
            DensityKernel::constant(zeros_eta.clone(), vec![0.4; atoms])?,
        ),
        (
            "claims-down".into(),
            DensityKernel::constant(zeros_eta, vec![-0.4; atoms])?,
        ),
        ("scaled-0.5".into(), DensityKernel::scaled(saddle()?, 0.5, 0.5)?),
        ("scaled-1.5".into(), DensityKernel::scaled(saddle()?, 1.5, 1.5)?),
        ("drift-half".into(), DensityKernel::scaled(saddle()?, 0.5, 1.0)?),
        ("claims-half".into(), DensityKernel::scaled(saddle()?, 1.0, 0.5)?),
        ("drift-double".into(), DensityKernel::scaled(saddle()?, 2.0, 1.0)?),
    ])
}
