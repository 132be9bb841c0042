//! Forward simulation of wealth, the density exponential, and the factor
//! on one shared grid.
//!
//! One path is one RNG stream: claim times and sizes are drawn first
//! (exact exponential interarrivals), then one Gaussian block per step, so
//! schemes with different grids still see the same claim skeleton for the
//! same seed. Between claims wealth follows an Euler step of
//!
//! ```text
//!   dX = [r X + pi'mu + b q + a + q lambda E[Y]] dt + (sigma' pi)' dW
//! ```
//!
//! and each claim in a step removes `q * Y` at the step end, with `q` frozen
//! at the step start. The density multiplies
//! `exp(eta'dW - |eta|^2 dt/2 - lambda sum_i psi_i p_i dt)` per step and
//! `(1 + psi_atom)` per claim, which keeps its expectation exactly one for
//! step-start-measurable kernels.
//!
//! Antithetic mode pairs paths `2j, 2j+1` on one stream: identical claims,
//! mirrored Gaussians.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::claims::sample_claim_schedule;
use crate::error::{Error, Result};
use crate::market::{Coefficients, Model};
use crate::strategy::{CompiledKernel, CompiledStrategy, KernelSlice};

/// State handed to the per-node callback, including the initial node.
#[derive(Debug)]
pub struct NodeState<'a> {
    pub k: usize,
    pub t: f64,
    pub wealth: f64,
    pub density: f64,
    pub factor: Option<&'a DVector<f64>>,
}

/// Terminal summary of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    pub terminal_wealth: f64,
    pub terminal_density: f64,
    pub clamped_steps: usize,
    pub n_claims: usize,
}

/// Node-by-node trajectory, for tests and small diagnostic runs.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub wealth: Vec<f64>,
    pub density: Vec<f64>,
    pub stats: PathStats,
}

/// Shared, immutable simulation setup; paths are independent and safe to
/// run concurrently.
pub struct PathEngine<'a> {
    model: &'a Model,
    strategy: &'a CompiledStrategy,
    kernel: Option<&'a CompiledKernel>,
    x0: f64,
    seed: u64,
    antithetic: bool,
    /// Per-node coefficients when the market has no factor.
    coeff_cache: Option<Vec<Coefficients>>,
    /// Per-node kernel slice and its claim compensator `lambda sum psi p`.
    kernel_cache: Option<Vec<(KernelSlice, f64)>>,
}

impl<'a> PathEngine<'a> {
    pub fn new(
        model: &'a Model,
        strategy: &'a CompiledStrategy,
        kernel: Option<&'a CompiledKernel>,
        x0: f64,
        seed: u64,
        antithetic: bool,
    ) -> Result<Self> {
        let grid = strategy.grid();
        let horizon = model.market.horizon();
        let tol = 1e-9 * horizon.max(1.0);
        if grid[0].abs() > tol || (grid[grid.len() - 1] - horizon).abs() > tol {
            return Err(Error::invalid("simulate", "strategy grid must span [0, horizon]"));
        }
        if let Some(kern) = kernel {
            let kg = kern.grid();
            let aligned = kg.len() == grid.len()
                && kg.iter().zip(grid).all(|(a, b)| (a - b).abs() <= tol);
            if !aligned {
                return Err(Error::invalid("simulate", "kernel grid differs from strategy grid"));
            }
        }
        if !x0.is_finite() {
            return Err(Error::invalid("simulate", "initial wealth must be finite"));
        }
        let coeff_cache = if model.market.is_deterministic() {
            Some(
                grid.iter()
                    .map(|&t| model.market.coefficients_at(t, None))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let kernel_cache = match kernel {
            Some(kern) if model.market.is_deterministic() => Some(
                (0..grid.len())
                    .map(|k| {
                        let s = kern.at_node(k, None)?;
                        let comp = claim_compensator(model, &s);
                        Ok((s, comp))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(Self {
            model,
            strategy,
            kernel,
            x0,
            seed,
            antithetic,
            coeff_cache,
            kernel_cache,
        })
    }

    pub fn grid(&self) -> &[f64] {
        self.strategy.grid()
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn initial_wealth(&self) -> f64 {
        self.x0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn has_kernel(&self) -> bool {
        self.kernel.is_some()
    }

    pub fn run(&self, path: usize) -> Result<PathStats> {
        self.run_with(path, |_| {})
    }

    pub fn record(&self, path: usize) -> Result<PathRecord> {
        let n = self.grid().len();
        let mut wealth = Vec::with_capacity(n);
        let mut density = Vec::with_capacity(n);
        let stats = self.run_with(path, |s| {
            wealth.push(s.wealth);
            density.push(s.density);
        })?;
        Ok(PathRecord {
            wealth,
            density,
            stats,
        })
    }

    /// Simulates one path, invoking `on_node` at every grid node (the
    /// initial one included).
    pub fn run_with<F: FnMut(&NodeState)>(&self, path: usize, mut on_node: F) -> Result<PathStats> {
        let grid = self.grid();
        let n_steps = grid.len() - 1;
        let horizon = self.model.market.horizon();
        let n_w = self.model.market.n_brownian();
        let insurance = &self.model.insurance;
        let claims = &self.model.claims;
        let b = insurance.retention_premium();
        let a = insurance.full_ceding_drift();
        let claim_rate = insurance.lambda * claims.mean();

        let (stream, flip) = if self.antithetic {
            ((path / 2) as u64 + 1, path % 2 == 1)
        } else {
            (path as u64 + 1, false)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let events = sample_claim_schedule(&mut rng, insurance.lambda, horizon, claims);
        let mut next_event = 0;

        let mut x = self.x0;
        let mut lam = 1.0_f64;
        let mut factor = self.model.market.factor().map(|f| f.initial.clone());
        let mut clamped = 0usize;
        let mut dw = DVector::<f64>::zeros(n_w);

        on_node(&NodeState {
            k: 0,
            t: grid[0],
            wealth: x,
            density: lam,
            factor: factor.as_ref(),
        });

        for k in 0..n_steps {
            let t = grid[k];
            let dt = grid[k + 1] - t;
            let sqrt_dt = dt.sqrt();

            let d = self.strategy.decide(k, x, factor.as_ref())?;
            if d.clamped {
                clamped += 1;
            }
            let owned_slice;
            let tilt: Option<(&KernelSlice, f64)> = match (&self.kernel_cache, self.kernel) {
                (Some(cache), _) => {
                    let (s, comp) = &cache[k];
                    Some((s, *comp))
                }
                (None, Some(kern)) => {
                    let s = kern.at_node(k, factor.as_ref())?;
                    let comp = claim_compensator(self.model, &s);
                    owned_slice = s;
                    Some((&owned_slice, comp))
                }
                (None, None) => None,
            };
            let owned_coeffs;
            let coeffs = match &self.coeff_cache {
                Some(cache) => &cache[k],
                None => {
                    owned_coeffs = self.model.market.coefficients_at(t, factor.as_ref())?;
                    &owned_coeffs
                }
            };

            for z in dw.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *z = if flip { -g } else { g } * sqrt_dt;
            }

            let drift = coeffs.rate * x
                + d.investment.dot(&coeffs.mu)
                + (b + claim_rate) * d.retention
                + a;
            x += drift * dt + d.investment.dot(&(&coeffs.sigma * &dw));

            if let Some((s, comp)) = tilt {
                lam *= (s.eta.dot(&dw) - 0.5 * s.eta.norm_squared() * dt - comp * dt).exp();
            }

            if let Some(f) = factor.as_mut() {
                let fm = self.model.market.factor().unwrap();
                let drift_f = fm.drift(f);
                *f += drift_f * dt + &fm.diffusion * &dw;
            }

            // claims land at the end of the step that contains them
            let cutoff = if k + 1 == n_steps { f64::INFINITY } else { grid[k + 1] };
            while next_event < events.len() && events[next_event].time <= cutoff {
                let ev = &events[next_event];
                let y = claims.atoms()[ev.atom].size;
                x -= d.retention * y;
                if let Some((s, _)) = tilt {
                    lam *= 1.0 + s.psi[ev.atom];
                }
                if let Some(f) = factor.as_mut() {
                    let fm = self.model.market.factor().unwrap();
                    *f = fm.jump_shift(f, y);
                }
                next_event += 1;
            }

            if !(x.is_finite() && lam.is_finite() && lam > 0.0) {
                return Err(Error::solver(
                    "simulate",
                    format!("path {path} diverged at step {k}: wealth {x}, density {lam}"),
                ));
            }

            on_node(&NodeState {
                k: k + 1,
                t: grid[k + 1],
                wealth: x,
                density: lam,
                factor: factor.as_ref(),
            });
        }

        Ok(PathStats {
            terminal_wealth: x,
            terminal_density: lam,
            clamped_steps: clamped,
            n_claims: events.len(),
        })
    }
}

fn claim_compensator(model: &Model, slice: &KernelSlice) -> f64 {
    model.insurance.lambda
        * model
            .claims
            .atoms()
            .iter()
            .zip(&slice.psi)
            .map(|(atom, psi)| psi * atom.prob)
            .sum::<f64>()
}
