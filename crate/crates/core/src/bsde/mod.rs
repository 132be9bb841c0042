//! Backward equations for the value weights and their solution tables.
//!
//! Four scalar backward equations appear, all with terminal value 1:
//!
//! * `P`: the monotone problem's inverse value weight;
//! * `Y`: its reciprocal, the weight that prices the monotone objective;
//! * `P1`, `P2`: second-moment weights of the classical problem above and
//!   below the discounted target.
//!
//! With deterministic coefficient schedules the diffusion and jump parts of
//! every solution triple vanish and the equations reduce to scalar ODEs,
//! integrated backward at fourth order ([`deterministic`]). With
//! factor-driven coefficients the triples are functions of the factor state
//! and are approximated by least-squares regression on simulated factor
//! paths ([`lsmc`]).
//!
//! The reciprocal transforms are exact on either representation:
//!
//! ```text
//!   P -> Y:   Y = 1/P,        Z = -Delta/P^2,        V_i = 1/(P+Gamma_i) - 1/P
//!   P2 -> Y:  Y = h^2/P2,     Z = -h^2 Delta/P2^2,   V_i = h^2/(P2+Gamma_i) - h^2/P2
//! ```
//!
//! and positivity certificates map through reciprocals.

pub mod deterministic;
pub mod drivers;
pub mod lsmc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::RateSchedule;

pub use lsmc::{LsmcData, LsmcStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    /// Inverse value weight of the monotone problem.
    P,
    /// Above-target second-moment weight of the classical problem.
    P1,
    /// Below-target second-moment weight of the classical problem.
    P2,
    /// Value weight of the monotone problem (reciprocal of `P`).
    Y,
}

/// Solution triple frozen at one `(t, state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSlice {
    pub value: f64,
    pub diffusion: DVector<f64>,
    /// Jump component per claim atom.
    pub jumps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum SolutionData {
    Grid(GridData),
    Lsmc(LsmcData),
    /// Lazy `1/P` view of a stored `P` solution.
    Reciprocal(Box<BsdeSolution>),
    /// Lazy `h^2/P2` view of a stored `P2` solution.
    DiscountedReciprocal {
        base: Box<BsdeSolution>,
        rates: RateSchedule,
    },
}

/// Node values of a deterministic solution, with time derivatives for
/// dense (cubic Hermite) output inside the solver.
#[derive(Debug, Clone)]
pub struct GridData {
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    pub n_brownian: usize,
    pub n_atoms: usize,
}

/// A solved backward equation on a time grid.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    equation: Equation,
    grid: Vec<f64>,
    data: SolutionData,
    c_low: f64,
    c_high: f64,
    clamp_rate: f64,
}

impl BsdeSolution {
    pub(crate) fn new(
        equation: Equation,
        grid: Vec<f64>,
        data: SolutionData,
        c_low: f64,
        c_high: f64,
        clamp_rate: f64,
    ) -> Result<Self> {
        if !(c_low > 0.0) {
            return Err(Error::positivity(
                "solution",
                format!("lower certificate {c_low} not positive"),
            ));
        }
        Ok(Self {
            equation,
            grid,
            data,
            c_low,
            c_high,
            clamp_rate,
        })
    }

    pub fn equation(&self) -> Equation {
        self.equation
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Certified bounds: every evaluation of `value` and `value + jump_i`
    /// on the solve set lies in `[c_low, c_high]`.
    pub fn certificates(&self) -> (f64, f64) {
        (self.c_low, self.c_high)
    }

    /// Fraction of solve-time evaluations clamped at the positivity floor.
    /// Zero for deterministic solutions.
    pub fn clamp_rate(&self) -> f64 {
        self.clamp_rate
    }

    pub fn is_deterministic(&self) -> bool {
        match &self.data {
            SolutionData::Grid(_) => true,
            SolutionData::Lsmc(_) => false,
            SolutionData::Reciprocal(b) => b.is_deterministic(),
            SolutionData::DiscountedReciprocal { base, .. } => base.is_deterministic(),
        }
    }

    fn bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutOfRange {
                what: "solution time",
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let idx = match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok((i, i, 0.0)),
            Err(i) => i,
        };
        let (lo, hi) = (idx - 1, idx);
        let w = (t - self.grid[lo]) / (self.grid[hi] - self.grid[lo]);
        Ok((lo, hi, w))
    }

    /// Solution triple at `(t, factor)`, linear in `t` between nodes. The
    /// factor argument is required exactly for regression-backed solutions.
    pub fn eval(&self, t: f64, factor: Option<&DVector<f64>>) -> Result<SolutionSlice> {
        let (lo, hi, w) = self.bracket(t)?;
        let a = self.eval_node(lo, factor)?;
        if lo == hi {
            return Ok(a);
        }
        let b = self.eval_node(hi, factor)?;
        Ok(SolutionSlice {
            value: (1.0 - w) * a.value + w * b.value,
            diffusion: &a.diffusion * (1.0 - w) + &b.diffusion * w,
            jumps: a
                .jumps
                .iter()
                .zip(&b.jumps)
                .map(|(x, y)| (1.0 - w) * x + w * y)
                .collect(),
        })
    }

    /// Triple exactly at grid node `k`.
    pub fn eval_node(&self, k: usize, factor: Option<&DVector<f64>>) -> Result<SolutionSlice> {
        match &self.data {
            SolutionData::Grid(g) => Ok(SolutionSlice {
                value: g.values[k],
                diffusion: DVector::zeros(g.n_brownian),
                jumps: vec![0.0; g.n_atoms],
            }),
            SolutionData::Lsmc(l) => l.eval_node(k, factor),
            SolutionData::Reciprocal(base) => {
                Ok(reciprocal_slice(&base.eval_node(k, factor)?, 1.0))
            }
            SolutionData::DiscountedReciprocal { base, rates } => {
                let h = rates.discount(self.grid[k])?;
                let mut slice = reciprocal_slice(&base.eval_node(k, factor)?, h * h);
                // d(h^2)/dt = -2 r h^2 feeds the diffusion only through P2,
                // which is what reciprocal_slice already handled; nothing else.
                slice.value = slice.value.max(f64::MIN_POSITIVE);
                Ok(slice)
            }
        }
    }

    /// Value component only; convenience for targets and reports.
    pub fn value_at(&self, t: f64, factor: Option<&DVector<f64>>) -> Result<f64> {
        Ok(self.eval(t, factor)?.value)
    }

    /// Cubic Hermite dense output for deterministic solutions; used by the
    /// coupled solver stages, where linear interpolation would cap the
    /// integration order.
    pub(crate) fn eval_hermite(&self, t: f64) -> Result<f64> {
        let g = match &self.data {
            SolutionData::Grid(g) => g,
            _ => {
                return Err(Error::invalid(
                    "solution",
                    "dense output requires a deterministic grid solution",
                ))
            }
        };
        let (lo, hi, w) = self.bracket(t)?;
        if lo == hi {
            return Ok(g.values[lo]);
        }
        let h = self.grid[hi] - self.grid[lo];
        let (v0, v1, d0, d1) = (g.values[lo], g.values[hi], g.derivs[lo], g.derivs[hi]);
        let w2 = w * w;
        let w3 = w2 * w;
        Ok(v0 * (2.0 * w3 - 3.0 * w2 + 1.0)
            + d0 * h * (w3 - 2.0 * w2 + w)
            + v1 * (-2.0 * w3 + 3.0 * w2)
            + d1 * h * (w3 - w2))
    }

    /// `Y` solution from a solved `P` equation: `Y = 1/P` with the exact
    /// triple transform. Certificates map through reciprocals.
    pub fn p_to_y(&self) -> Result<BsdeSolution> {
        if self.equation != Equation::P {
            return Err(Error::invalid("transform", "p_to_y needs a P solution"));
        }
        match &self.data {
            SolutionData::Grid(g) => {
                let values: Vec<f64> = g.values.iter().map(|p| 1.0 / p).collect();
                // dY/dt = -P'/P^2
                let derivs: Vec<f64> = g
                    .values
                    .iter()
                    .zip(&g.derivs)
                    .map(|(p, dp)| -dp / (p * p))
                    .collect();
                BsdeSolution::new(
                    Equation::Y,
                    self.grid.clone(),
                    SolutionData::Grid(GridData {
                        values,
                        derivs,
                        n_brownian: g.n_brownian,
                        n_atoms: g.n_atoms,
                    }),
                    1.0 / self.c_high,
                    1.0 / self.c_low,
                    self.clamp_rate,
                )
            }
            _ => BsdeSolution::new(
                Equation::Y,
                self.grid.clone(),
                SolutionData::Reciprocal(Box::new(self.clone())),
                1.0 / self.c_high,
                1.0 / self.c_low,
                self.clamp_rate,
            ),
        }
    }

    /// Recovers the `P` solution from a `Y` built by [`p_to_y`]; exact
    /// round trip for grid data.
    pub fn y_to_p(&self) -> Result<BsdeSolution> {
        if self.equation != Equation::Y {
            return Err(Error::invalid("transform", "y_to_p needs a Y solution"));
        }
        match &self.data {
            SolutionData::Reciprocal(base) => Ok((**base).clone()),
            SolutionData::Grid(g) => {
                let values: Vec<f64> = g.values.iter().map(|y| 1.0 / y).collect();
                let derivs: Vec<f64> = g
                    .values
                    .iter()
                    .zip(&g.derivs)
                    .map(|(y, dy)| -dy / (y * y))
                    .collect();
                BsdeSolution::new(
                    Equation::P,
                    self.grid.clone(),
                    SolutionData::Grid(GridData {
                        values,
                        derivs,
                        n_brownian: g.n_brownian,
                        n_atoms: g.n_atoms,
                    }),
                    1.0 / self.c_high,
                    1.0 / self.c_low,
                    self.clamp_rate,
                )
            }
            _ => Err(Error::invalid(
                "transform",
                "y_to_p needs a reciprocal view or grid data",
            )),
        }
    }

    /// `Y` solution from a solved `P2` equation: `Y = h^2 / P2` where `h` is
    /// the compounding factor of `rates`.
    pub fn y_from_p2(&self, rates: &RateSchedule) -> Result<BsdeSolution> {
        if self.equation != Equation::P2 {
            return Err(Error::invalid("transform", "y_from_p2 needs a P2 solution"));
        }
        if (rates.horizon() - self.horizon()).abs() > 1e-12 * self.horizon().max(1.0) {
            return Err(Error::invalid("transform", "rate schedule horizon mismatch"));
        }
        let mut h_lo = f64::INFINITY;
        let mut h_hi = 0.0f64;
        for &t in &self.grid {
            let h = rates.discount(t)?;
            h_lo = h_lo.min(h);
            h_hi = h_hi.max(h);
        }
        let (c_low, c_high) = (
            h_lo * h_lo / self.c_high,
            h_hi * h_hi / self.c_low,
        );
        match &self.data {
            SolutionData::Grid(g) => {
                let mut values = Vec::with_capacity(g.values.len());
                let mut derivs = Vec::with_capacity(g.values.len());
                for (k, (&p, &dp)) in g.values.iter().zip(&g.derivs).enumerate() {
                    let t = self.grid[k];
                    let h2 = rates.discount(t)?.powi(2);
                    let r = rates.rate_at(t.min(self.horizon() * (1.0 - 1e-16)));
                    values.push(h2 / p);
                    // d/dt (h^2/p) = -2 r h^2/p - h^2 p'/p^2
                    derivs.push(-2.0 * r * h2 / p - h2 * dp / (p * p));
                }
                BsdeSolution::new(
                    Equation::Y,
                    self.grid.clone(),
                    SolutionData::Grid(GridData {
                        values,
                        derivs,
                        n_brownian: g.n_brownian,
                        n_atoms: g.n_atoms,
                    }),
                    c_low,
                    c_high,
                    self.clamp_rate,
                )
            }
            _ => BsdeSolution::new(
                Equation::Y,
                self.grid.clone(),
                SolutionData::DiscountedReciprocal {
                    base: Box::new(self.clone()),
                    rates: rates.clone(),
                },
                c_low,
                c_high,
                self.clamp_rate,
            ),
        }
    }

    /// Writes `t,value,diffusion...,jump...` rows. Regression-backed
    /// solutions are frozen at the supplied factor state.
    pub fn to_csv(&self, factor: Option<&DVector<f64>>) -> Result<String> {
        let probe = self.eval_node(0, factor)?;
        let mut out = String::from("t,value");
        for j in 0..probe.diffusion.len() {
            out.push_str(&format!(",diffusion_{j}"));
        }
        for j in 0..probe.jumps.len() {
            out.push_str(&format!(",jump_{j}"));
        }
        out.push('\n');
        for k in 0..self.grid.len() {
            let s = self.eval_node(k, factor)?;
            out.push_str(&format!("{}", self.grid[k]));
            out.push_str(&format!(",{}", s.value));
            for d in s.diffusion.iter() {
                out.push_str(&format!(",{d}"));
            }
            for j in &s.jumps {
                out.push_str(&format!(",{j}"));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Reads a table written by [`to_csv`] back into a grid solution.
    /// Derivatives are rebuilt by central differences, so dense output is
    /// approximate; strategy evaluation (linear in `t`) is exact.
    /// Lines starting with `#` are provenance stamps and are skipped.
    pub fn from_csv(text: &str, equation: Equation) -> Result<BsdeSolution> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("solution csv", "empty input"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "t" || cols[1] != "value" {
            return Err(Error::invalid("solution csv", "unexpected header"));
        }
        let n_brownian = cols.iter().filter(|c| c.starts_with("diffusion_")).count();
        let n_atoms = cols.iter().filter(|c| c.starts_with("jump_")).count();
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::invalid(
                    "solution csv",
                    format!("row {} has {} fields, expected {}", ln + 2, fields.len(), cols.len()),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid("solution csv", format!("bad number {s:?}")))
            };
            grid.push(parse(fields[0])?);
            values.push(parse(fields[1])?);
        }
        if grid.len() < 2 {
            return Err(Error::invalid("solution csv", "need at least two rows"));
        }
        let derivs = central_differences(&grid, &values);
        let (c_low, c_high) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        BsdeSolution::new(
            equation,
            grid,
            SolutionData::Grid(GridData {
                values,
                derivs,
                n_brownian,
                n_atoms,
            }),
            c_low,
            c_high,
            0.0,
        )
    }
}

fn reciprocal_slice(base: &SolutionSlice, scale: f64) -> SolutionSlice {
    let p = base.value;
    SolutionSlice {
        value: scale / p,
        diffusion: &base.diffusion * (-scale / (p * p)),
        jumps: base
            .jumps
            .iter()
            .map(|g| scale / (p + g) - scale / p)
            .collect(),
    }
}

fn central_differences(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                (values[1] - values[0]) / (grid[1] - grid[0])
            } else if k == n - 1 {
                (values[n - 1] - values[n - 2]) / (grid[n - 1] - grid[n - 2])
            } else {
                (values[k + 1] - values[k - 1]) / (grid[k + 1] - grid[k - 1])
            }
        })
        .collect()
}
