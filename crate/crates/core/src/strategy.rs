//! Feedback strategies, density tilts, and closed-form values.
//!
//! Two optimal feedback rules share one shape: a pivot level in shifted
//! wealth and directions applied to the distance from it.
//!
//! * The monotone rule invests `(target/h - Xs) * witness(Proj(Y phi - Z))/Y`
//!   and retains the analogous fraction of claims, clamping the multiplier
//!   at zero if wealth ever overshoots the pivot (it cannot along the
//!   optimal flow, but a discrete simulation can step past it).
//! * The classical rule for a fixed pivot `zeta` plays the above-target
//!   directions on `(Xs - zeta/h)^+` and the below-target directions on
//!   `(Xs - zeta/h)^-`.
//!
//! Here `Xs = X + a A_t` is wealth shifted by the annuity value of the
//! full-ceding drift, and `h` the compounding factor to the horizon.
//!
//! For deterministic models every rule compiles to a per-node table of
//! affine rules, which keeps million-path simulations off the projection
//! solver; factor-driven models fall back to slice evaluation per decision.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bsde::drivers::{minimize_g1, rho_mv, DriverInputs};
use crate::bsde::{BsdeSolution, Equation};
use crate::cone::{project_cone, rho_mmv, ConeConstraint};
use crate::error::{Error, Result};
use crate::market::Model;

/// Investment vector and retained claim fraction for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub investment: DVector<f64>,
    pub retention: f64,
    /// True when the monotone multiplier was clamped at zero.
    pub clamped: bool,
}

/// Saddle-point feedback rule of the monotone problem.
#[derive(Debug, Clone)]
pub struct MonotoneRule {
    model: Model,
    y: BsdeSolution,
    /// `h_0 xs_0 + Y_0 / theta`, the wealth level the rule steers toward.
    target: f64,
}

impl MonotoneRule {
    pub fn new(model: Model, y: BsdeSolution, theta: f64, x0: f64) -> Result<Self> {
        if y.equation() != Equation::Y {
            return Err(Error::invalid("strategy", "monotone rule needs a Y solution"));
        }
        check_horizon(&model, &y)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::invalid("strategy", format!("theta {theta} must be > 0")));
        }
        let y0 = y.value_at(0.0, initial_factor(&model).as_ref())?;
        let xs = model.effective_initial_wealth(x0)?;
        let target = model.market.discount(0.0)? * xs + y0 / theta;
        Ok(Self { model, y, target })
    }

    /// The wealth level `a~` the rule steers toward (undiscounted units).
    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn decide(&self, t: f64, x: f64, factor: Option<&DVector<f64>>) -> Result<Decision> {
        let slice = self.y.eval(t, factor)?;
        let coeffs = self.model.market.coefficients_at(t, factor)?;
        let h = self.model.market.discount(t)?;
        let xs = self.model.shifted_wealth(t, x)?;
        let raw = (self.target - h * xs) / (h * slice.value);
        let (mult, clamped) = if raw < 0.0 { (0.0, true) } else { (raw, false) };
        let w = coeffs.phi() * slice.value - &slice.diffusion;
        let proj = project_cone(&w, &coeffs.sigma, &self.model.cone)?;
        let beta = coeffs.witness(&proj.xi);
        let rho = if self.model.insurance.lambda > 0.0 {
            rho_mmv(slice.value, &slice.jumps, &self.model.claims, &self.model.insurance)?
        } else {
            0.0
        };
        Ok(Decision {
            investment: beta * mult,
            retention: rho * mult,
            clamped,
        })
    }
}

/// Two-sided feedback rule of the classical problem for a fixed pivot.
#[derive(Debug, Clone)]
pub struct TargetRule {
    model: Model,
    p1: BsdeSolution,
    p2: BsdeSolution,
    /// Pivot `zeta` in terminal-wealth units.
    pivot: f64,
}

impl TargetRule {
    pub fn new(model: Model, p1: BsdeSolution, p2: BsdeSolution, pivot: f64) -> Result<Self> {
        if p1.equation() != Equation::P1 || p2.equation() != Equation::P2 {
            return Err(Error::invalid(
                "strategy",
                "classical rule needs P1 and P2 solutions",
            ));
        }
        check_horizon(&model, &p1)?;
        check_horizon(&model, &p2)?;
        if !pivot.is_finite() {
            return Err(Error::invalid("strategy", "pivot must be finite"));
        }
        Ok(Self { model, p1, p2, pivot })
    }

    pub fn pivot(&self) -> f64 {
        self.pivot
    }

    pub fn decide(&self, t: f64, x: f64, factor: Option<&DVector<f64>>) -> Result<Decision> {
        let s1 = self.p1.eval(t, factor)?;
        let s2 = self.p2.eval(t, factor)?;
        let coeffs = self.model.market.coefficients_at(t, factor)?;
        let inputs = DriverInputs {
            coeffs: &coeffs,
            cone: &self.model.cone,
            claims: &self.model.claims,
            insurance: &self.model.insurance,
        };
        let h = self.model.market.discount(t)?;
        let xs = self.model.shifted_wealth(t, x)?;
        let dist = xs - self.pivot / h;
        let plus = dist.max(0.0);
        let minus = (-dist).max(0.0);

        let w1 = -(coeffs.phi() + &s1.diffusion / s1.value);
        let xi1 = project_cone(&w1, &coeffs.sigma, &self.model.cone)?.xi;
        let dir1 = coeffs.witness(&xi1);
        let w2 = coeffs.phi() + &s2.diffusion / s2.value;
        let xi2 = project_cone(&w2, &coeffs.sigma, &self.model.cone)?.xi;
        let dir2 = coeffs.witness(&xi2);

        let (rho1, rho2) = if self.model.insurance.lambda > 0.0 {
            (
                minimize_g1(s1.value, &s1.jumps, s2.value, &s2.jumps, &inputs)?.0,
                rho_mv(s2.value, &s2.jumps, &inputs)?,
            )
        } else {
            (0.0, 0.0)
        };
        Ok(Decision {
            investment: dir1 * plus + dir2 * minus,
            retention: rho1 * plus + rho2 * minus,
            clamped: false,
        })
    }
}

/// A playable strategy: one of the optimal rules, a fixed action, or an
/// admissibility-preserving composition used as a saddle perturbation.
#[derive(Debug, Clone)]
pub enum Strategy {
    Monotone(MonotoneRule),
    Target(TargetRule),
    Constant {
        investment: DVector<f64>,
        retention: f64,
    },
    Scaled {
        base: Box<Strategy>,
        investment_scale: f64,
        retention_scale: f64,
    },
    Shifted {
        base: Box<Strategy>,
        investment_shift: DVector<f64>,
        retention_shift: f64,
    },
}

impl Strategy {
    pub fn monotone(model: Model, y: BsdeSolution, theta: f64, x0: f64) -> Result<Self> {
        Ok(Strategy::Monotone(MonotoneRule::new(model, y, theta, x0)?))
    }

    pub fn target(model: Model, p1: BsdeSolution, p2: BsdeSolution, pivot: f64) -> Result<Self> {
        Ok(Strategy::Target(TargetRule::new(model, p1, p2, pivot)?))
    }

    /// Fixed action, validated against the cone once here.
    pub fn constant(
        cone: &ConeConstraint,
        investment: DVector<f64>,
        retention: f64,
    ) -> Result<Self> {
        if !cone.contains(&investment, 1e-12) {
            return Err(Error::admissibility(
                "strategy",
                "constant investment leaves the cone",
            ));
        }
        if !(retention >= 0.0) {
            return Err(Error::admissibility("strategy", "negative retention"));
        }
        Ok(Strategy::Constant {
            investment,
            retention,
        })
    }

    /// Does nothing: zero investment, full ceding.
    pub fn zero(n_assets: usize) -> Self {
        Strategy::Constant {
            investment: DVector::zeros(n_assets),
            retention: 0.0,
        }
    }

    /// Nonnegative scalings keep the action in the cone.
    pub fn scaled(base: Strategy, investment_scale: f64, retention_scale: f64) -> Result<Self> {
        if !(investment_scale >= 0.0 && retention_scale >= 0.0) {
            return Err(Error::admissibility(
                "strategy",
                "scales must be nonnegative to stay admissible",
            ));
        }
        Ok(Strategy::Scaled {
            base: Box::new(base),
            investment_scale,
            retention_scale,
        })
    }

    /// Shifts by a fixed admissible action; cones are closed under addition.
    pub fn shifted(
        base: Strategy,
        cone: &ConeConstraint,
        investment_shift: DVector<f64>,
        retention_shift: f64,
    ) -> Result<Self> {
        if !cone.contains(&investment_shift, 1e-12) {
            return Err(Error::admissibility(
                "strategy",
                "investment shift leaves the cone",
            ));
        }
        if !(retention_shift >= 0.0) {
            return Err(Error::admissibility("strategy", "negative retention shift"));
        }
        Ok(Strategy::Shifted {
            base: Box::new(base),
            investment_shift,
            retention_shift,
        })
    }

    pub fn decide(&self, t: f64, x: f64, factor: Option<&DVector<f64>>) -> Result<Decision> {
        match self {
            Strategy::Monotone(r) => r.decide(t, x, factor),
            Strategy::Target(r) => r.decide(t, x, factor),
            Strategy::Constant {
                investment,
                retention,
            } => Ok(Decision {
                investment: investment.clone(),
                retention: *retention,
                clamped: false,
            }),
            Strategy::Scaled {
                base,
                investment_scale,
                retention_scale,
            } => {
                let mut d = base.decide(t, x, factor)?;
                d.investment *= *investment_scale;
                d.retention *= *retention_scale;
                Ok(d)
            }
            Strategy::Shifted {
                base,
                investment_shift,
                retention_shift,
            } => {
                let mut d = base.decide(t, x, factor)?;
                d.investment += investment_shift;
                d.retention += retention_shift;
                Ok(d)
            }
        }
    }

    fn needs_dynamic_eval(&self) -> bool {
        match self {
            Strategy::Monotone(r) => !r.model.market.is_deterministic(),
            Strategy::Target(r) => !r.model.market.is_deterministic(),
            Strategy::Constant { .. } => false,
            Strategy::Scaled { base, .. } => base.needs_dynamic_eval(),
            Strategy::Shifted { base, .. } => base.needs_dynamic_eval(),
        }
    }

    fn affine_node(&self, t: f64) -> Result<AffineNode> {
        match self {
            Strategy::Monotone(r) => {
                let slice = r.y.eval(t, None)?;
                let coeffs = r.model.market.coefficients_at(t, None)?;
                let h = r.model.market.discount(t)?;
                let w = coeffs.phi() * slice.value - &slice.diffusion;
                let proj = project_cone(&w, &coeffs.sigma, &r.model.cone)?;
                let beta = coeffs.witness(&proj.xi);
                let rho = if r.model.insurance.lambda > 0.0 {
                    rho_mmv(slice.value, &slice.jumps, &r.model.claims, &r.model.insurance)?
                } else {
                    0.0
                };
                let n = beta.len();
                Ok(AffineNode {
                    wealth_shift: r.model.shifted_wealth(t, 0.0)?,
                    pivot: r.target / h,
                    w_plus: DVector::zeros(n),
                    rho_plus: 0.0,
                    w_minus: beta / slice.value,
                    rho_minus: rho / slice.value,
                    pi_const: DVector::zeros(n),
                    q_const: 0.0,
                    clamp_plus: true,
                })
            }
            Strategy::Target(r) => {
                let s1 = r.p1.eval(t, None)?;
                let s2 = r.p2.eval(t, None)?;
                let coeffs = r.model.market.coefficients_at(t, None)?;
                let inputs = DriverInputs {
                    coeffs: &coeffs,
                    cone: &r.model.cone,
                    claims: &r.model.claims,
                    insurance: &r.model.insurance,
                };
                let h = r.model.market.discount(t)?;
                let w1 = -(coeffs.phi() + &s1.diffusion / s1.value);
                let dir1 = coeffs.witness(&project_cone(&w1, &coeffs.sigma, &r.model.cone)?.xi);
                let w2 = coeffs.phi() + &s2.diffusion / s2.value;
                let dir2 = coeffs.witness(&project_cone(&w2, &coeffs.sigma, &r.model.cone)?.xi);
                let (rho1, rho2) = if r.model.insurance.lambda > 0.0 {
                    (
                        minimize_g1(s1.value, &s1.jumps, s2.value, &s2.jumps, &inputs)?.0,
                        rho_mv(s2.value, &s2.jumps, &inputs)?,
                    )
                } else {
                    (0.0, 0.0)
                };
                let n = dir1.len();
                Ok(AffineNode {
                    wealth_shift: r.model.shifted_wealth(t, 0.0)?,
                    pivot: r.pivot / h,
                    w_plus: dir1,
                    rho_plus: rho1,
                    w_minus: dir2,
                    rho_minus: rho2,
                    pi_const: DVector::zeros(n),
                    q_const: 0.0,
                    clamp_plus: false,
                })
            }
            Strategy::Constant {
                investment,
                retention,
            } => {
                let n = investment.len();
                Ok(AffineNode {
                    wealth_shift: 0.0,
                    pivot: 0.0,
                    w_plus: DVector::zeros(n),
                    rho_plus: 0.0,
                    w_minus: DVector::zeros(n),
                    rho_minus: 0.0,
                    pi_const: investment.clone(),
                    q_const: *retention,
                    clamp_plus: false,
                })
            }
            Strategy::Scaled {
                base,
                investment_scale,
                retention_scale,
            } => {
                let mut n = base.affine_node(t)?;
                n.w_plus *= *investment_scale;
                n.w_minus *= *investment_scale;
                n.pi_const *= *investment_scale;
                n.rho_plus *= *retention_scale;
                n.rho_minus *= *retention_scale;
                n.q_const *= *retention_scale;
                Ok(n)
            }
            Strategy::Shifted {
                base,
                investment_shift,
                retention_shift,
            } => {
                let mut n = base.affine_node(t)?;
                n.pi_const += investment_shift;
                n.q_const += retention_shift;
                Ok(n)
            }
        }
    }

    /// Freezes the rule on a time grid. Deterministic models get a pure
    /// table; factor-driven rules keep a dynamic fallback.
    pub fn compile(&self, grid: &[f64]) -> Result<CompiledStrategy> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("strategy", "grid must strictly increase"));
        }
        if self.needs_dynamic_eval() {
            return Ok(CompiledStrategy {
                grid: grid.to_vec(),
                kind: CompiledKind::Dynamic(Box::new(self.clone())),
            });
        }
        let nodes = grid
            .iter()
            .map(|&t| self.affine_node(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledStrategy {
            grid: grid.to_vec(),
            kind: CompiledKind::Table(nodes),
        })
    }
}

/// Affine-in-wealth rule at one grid node:
/// `m = x + wealth_shift - pivot`, action `= m^+ (w_plus, rho_plus) + m^-
/// (w_minus, rho_minus) + consts`.
#[derive(Debug, Clone)]
struct AffineNode {
    wealth_shift: f64,
    pivot: f64,
    w_plus: DVector<f64>,
    rho_plus: f64,
    w_minus: DVector<f64>,
    rho_minus: f64,
    pi_const: DVector<f64>,
    q_const: f64,
    clamp_plus: bool,
}

#[derive(Debug, Clone)]
enum CompiledKind {
    Table(Vec<AffineNode>),
    Dynamic(Box<Strategy>),
}

/// Strategy frozen on a simulation grid.
#[derive(Debug, Clone)]
pub struct CompiledStrategy {
    grid: Vec<f64>,
    kind: CompiledKind,
}

impl CompiledStrategy {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn decide(&self, k: usize, x: f64, factor: Option<&DVector<f64>>) -> Result<Decision> {
        match &self.kind {
            CompiledKind::Dynamic(s) => s.decide(self.grid[k], x, factor),
            CompiledKind::Table(nodes) => {
                let n = &nodes[k];
                let m = x + n.wealth_shift - n.pivot;
                let plus = m.max(0.0);
                let minus = (-m).max(0.0);
                Ok(Decision {
                    investment: &n.w_plus * plus + &n.w_minus * minus + &n.pi_const,
                    retention: n.rho_plus * plus + n.rho_minus * minus + n.q_const,
                    clamped: n.clamp_plus && m > 0.0,
                })
            }
        }
    }
}

/// Brownian tilt and per-atom claim tilt at one `(t, state)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSlice {
    pub eta: DVector<f64>,
    pub psi: Vec<f64>,
}

/// Density tilt generating the auxiliary measure of a strategy-measure pair.
#[derive(Debug, Clone)]
pub enum DensityKernel {
    Saddle(SaddleKernel),
    Constant(KernelSlice),
    Scaled {
        base: Box<DensityKernel>,
        eta_scale: f64,
        psi_scale: f64,
    },
}

/// The saddle-point tilt induced by the monotone weight solution:
/// `eta = -(Z + Proj(Y phi - Z))/Y`, `psi_i = (rho y_i - V_i)/(Y + V_i)`.
#[derive(Debug, Clone)]
pub struct SaddleKernel {
    model: Model,
    y: BsdeSolution,
}

impl DensityKernel {
    pub fn saddle(model: Model, y: BsdeSolution) -> Result<Self> {
        if y.equation() != Equation::Y {
            return Err(Error::invalid("kernel", "saddle tilt needs a Y solution"));
        }
        check_horizon(&model, &y)?;
        Ok(DensityKernel::Saddle(SaddleKernel { model, y }))
    }

    /// Fixed tilt; `psi_i > -1` strictly so the density stays positive.
    pub fn constant(eta: DVector<f64>, psi: Vec<f64>) -> Result<Self> {
        if psi.iter().any(|p| !(*p > -1.0 + 1e-9)) {
            return Err(Error::admissibility(
                "kernel",
                "claim tilt must stay above -1",
            ));
        }
        Ok(DensityKernel::Constant(KernelSlice { eta, psi }))
    }

    pub fn scaled(base: DensityKernel, eta_scale: f64, psi_scale: f64) -> Result<Self> {
        if !(eta_scale.is_finite() && psi_scale.is_finite()) {
            return Err(Error::invalid("kernel", "scales must be finite"));
        }
        Ok(DensityKernel::Scaled {
            base: Box::new(base),
            eta_scale,
            psi_scale,
        })
    }

    pub fn at(&self, t: f64, factor: Option<&DVector<f64>>) -> Result<KernelSlice> {
        let slice = match self {
            DensityKernel::Saddle(k) => {
                let s = k.y.eval(t, factor)?;
                let coeffs = k.model.market.coefficients_at(t, factor)?;
                let w = coeffs.phi() * s.value - &s.diffusion;
                let proj = project_cone(&w, &coeffs.sigma, &k.model.cone)?;
                let eta = -(&s.diffusion + &proj.xi) / s.value;
                let psi = if k.model.insurance.lambda > 0.0 {
                    let rho = rho_mmv(s.value, &s.jumps, &k.model.claims, &k.model.insurance)?;
                    k.model
                        .claims
                        .atoms()
                        .iter()
                        .zip(&s.jumps)
                        .map(|(atom, v)| (rho * atom.size - v) / (s.value + v))
                        .collect()
                } else {
                    vec![0.0; k.model.claims.len()]
                };
                KernelSlice { eta, psi }
            }
            DensityKernel::Constant(s) => s.clone(),
            DensityKernel::Scaled {
                base,
                eta_scale,
                psi_scale,
            } => {
                let mut s = base.at(t, factor)?;
                s.eta *= *eta_scale;
                for p in &mut s.psi {
                    *p *= *psi_scale;
                }
                s
            }
        };
        if slice.psi.iter().any(|p| !(*p > -1.0)) {
            return Err(Error::positivity("kernel", "claim tilt reached -1"));
        }
        Ok(slice)
    }

    fn needs_dynamic_eval(&self) -> bool {
        match self {
            DensityKernel::Saddle(k) => !k.model.market.is_deterministic(),
            DensityKernel::Constant(_) => false,
            DensityKernel::Scaled { base, .. } => base.needs_dynamic_eval(),
        }
    }

    pub fn compile(&self, grid: &[f64]) -> Result<CompiledKernel> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("kernel", "grid must strictly increase"));
        }
        if self.needs_dynamic_eval() {
            return Ok(CompiledKernel {
                grid: grid.to_vec(),
                kind: KernelKind::Dynamic(Box::new(self.clone())),
            });
        }
        let nodes = grid
            .iter()
            .map(|&t| self.at(t, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledKernel {
            grid: grid.to_vec(),
            kind: KernelKind::Table(nodes),
        })
    }
}

#[derive(Debug, Clone)]
enum KernelKind {
    Table(Vec<KernelSlice>),
    Dynamic(Box<DensityKernel>),
}

/// Density kernel frozen on a simulation grid.
#[derive(Debug, Clone)]
pub struct CompiledKernel {
    grid: Vec<f64>,
    kind: KernelKind,
}

impl CompiledKernel {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at_node(&self, k: usize, factor: Option<&DVector<f64>>) -> Result<KernelSlice> {
        match &self.kind {
            KernelKind::Table(nodes) => Ok(nodes[k].clone()),
            KernelKind::Dynamic(d) => d.at(self.grid[k], factor),
        }
    }
}

/// Initial factor state if the model carries one.
pub fn initial_factor(model: &Model) -> Option<DVector<f64>> {
    model.market.factor().map(|f| f.initial.clone())
}

fn check_horizon(model: &Model, sol: &BsdeSolution) -> Result<()> {
    let t = model.market.horizon();
    if (sol.horizon() - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::invalid("strategy", "solution horizon mismatch"));
    }
    Ok(())
}

/// Monotone objective value `h_0 xs + (Y_0 - 1) / (2 theta)`.
pub fn monotone_value(model: &Model, y: &BsdeSolution, theta: f64, x0: f64) -> Result<f64> {
    if y.equation() != Equation::Y {
        return Err(Error::invalid("value", "needs a Y solution"));
    }
    check_theta(theta)?;
    let y0 = y.value_at(0.0, initial_factor(model).as_ref())?;
    let xs = model.effective_initial_wealth(x0)?;
    Ok(model.market.discount(0.0)? * xs + (y0 - 1.0) / (2.0 * theta))
}

/// Classical objective value `h_0 xs + (h_0^2 / P2_0 - 1) / (2 theta)`.
pub fn classical_value(model: &Model, p2: &BsdeSolution, theta: f64, x0: f64) -> Result<f64> {
    check_theta(theta)?;
    let (h0, p20) = p2_initials(model, p2)?;
    let xs = model.effective_initial_wealth(x0)?;
    Ok(h0 * xs + (h0 * h0 / p20 - 1.0) / (2.0 * theta))
}

/// Optimal mean target `z^ = h_0 xs + (h_0^2 / P2_0 - 1) / theta` of the
/// classical problem.
pub fn optimal_target(model: &Model, p2: &BsdeSolution, theta: f64, x0: f64) -> Result<f64> {
    check_theta(theta)?;
    let (h0, p20) = p2_initials(model, p2)?;
    let xs = model.effective_initial_wealth(x0)?;
    Ok(h0 * xs + (h0 * h0 / p20 - 1.0) / theta)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid("value", format!("theta {theta} must be > 0")));
    }
    Ok(())
}

fn p2_initials(model: &Model, p2: &BsdeSolution) -> Result<(f64, f64)> {
    if p2.equation() != Equation::P2 {
        return Err(Error::invalid("value", "needs a P2 solution"));
    }
    let h0 = model.market.discount(0.0)?;
    let p20 = p2.value_at(0.0, initial_factor(model).as_ref())?;
    Ok((h0, p20))
}

/// One point of the classical mean-variance frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target_mean: f64,
    /// Maximizing pivot `zeta^(z)` of the dual target problem.
    pub pivot: f64,
    pub min_variance: f64,
}

/// Auxiliary target cost `J(z, zeta) = P1_0 ((xs - zeta/h_0)^+)^2 +
/// P2_0 ((xs - zeta/h_0)^-)^2 - (zeta - z)^2`; its supremum over `zeta` is
/// the minimal variance at mean `z`.
pub fn target_cost(
    model: &Model,
    p1: &BsdeSolution,
    p2: &BsdeSolution,
    x0: f64,
    z: f64,
    zeta: f64,
) -> Result<f64> {
    if p1.equation() != Equation::P1 {
        return Err(Error::invalid("value", "needs a P1 solution"));
    }
    let (h0, p20) = p2_initials(model, p2)?;
    let p10 = p1.value_at(0.0, initial_factor(model).as_ref())?;
    let xs = model.effective_initial_wealth(x0)?;
    let dist = xs - zeta / h0;
    let above = dist.max(0.0);
    let below = (-dist).max(0.0);
    Ok(p10 * above * above + p20 * below * below - (zeta - z) * (zeta - z))
}

/// Closed-form frontier point at mean `z`.
///
/// Writing `alpha = P1_0/h_0^2 <= 1` and `beta = P2_0/h_0^2 <= 1`:
/// means above the risk-free growth `h_0 xs` use the below-target branch
/// (`F = (z - h_0 xs)^2 beta/(1-beta)`), means below use the above-target
/// branch, and a degenerate branch ratio of 1 makes that side unattainable.
pub fn frontier_point(
    model: &Model,
    p1: &BsdeSolution,
    p2: &BsdeSolution,
    x0: f64,
    z: f64,
) -> Result<FrontierPoint> {
    if p1.equation() != Equation::P1 {
        return Err(Error::invalid("value", "needs a P1 solution"));
    }
    let (h0, p20) = p2_initials(model, p2)?;
    let p10 = p1.value_at(0.0, initial_factor(model).as_ref())?;
    let xs = model.effective_initial_wealth(x0)?;
    let base = h0 * xs;
    let alpha = p10 / (h0 * h0);
    let beta = p20 / (h0 * h0);
    let (pivot, min_variance) = if z == base {
        (z, 0.0)
    } else if z > base {
        if beta > 1.0 - 1e-12 {
            return Err(Error::admissibility(
                "frontier",
                "no investment or retention edge: means above risk-free growth unattainable",
            ));
        }
        ((z - beta * base) / (1.0 - beta), (z - base).powi(2) * beta / (1.0 - beta))
    } else {
        if alpha > 1.0 - 1e-12 {
            return Err(Error::admissibility(
                "frontier",
                "cone blocks downside positions: means below risk-free growth unattainable",
            ));
        }
        ((z - alpha * base) / (1.0 - alpha), (z - base).powi(2) * alpha / (1.0 - alpha))
    };
    Ok(FrontierPoint {
        target_mean: z,
        pivot,
        min_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::deterministic::solve_deterministic;
    use crate::claims::ClaimDistribution;
    use crate::insurance::InsuranceParams;
    use crate::market::{CoefficientField, MarketModel, Piecewise, RateSchedule};
    use nalgebra::DMatrix;

    const THETA: f64 = 0.7;
    const X0: f64 = 1.3;
    const DT: f64 = 1.0 / 64.0;

    fn build_model(cone: ConeConstraint, eta_gap: bool) -> Model {
        let rates = RateSchedule::constant(0.03, 2.0).unwrap();
        let market = MarketModel::new(
            rates,
            CoefficientField::Deterministic {
                mu: Piecewise::constant(DVector::from_element(1, 0.06)),
                sigma: Piecewise::constant(DMatrix::from_element(1, 1, 0.2)),
            },
            1e-6,
        )
        .unwrap();
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        let (eta_i, eta_r) = if eta_gap { (0.2, 0.3) } else { (0.25, 0.25) };
        let insurance = InsuranceParams::new(2.0, eta_i, eta_r, &claims).unwrap();
        Model::new(market, insurance, claims, cone).unwrap()
    }

    fn solved(model: &Model) -> (BsdeSolution, BsdeSolution, BsdeSolution) {
        let y = solve_deterministic(Equation::Y, model, DT, None).unwrap();
        let p2 = solve_deterministic(Equation::P2, model, DT, None).unwrap();
        let p1 = solve_deterministic(Equation::P1, model, DT, Some(&p2)).unwrap();
        (y, p1, p2)
    }

    #[test]
    fn monotone_equals_classical_at_optimal_pivot() {
        for cone in [
            ConeConstraint::unconstrained(1).unwrap(),
            ConeConstraint::nonnegative(1).unwrap(),
        ] {
            let model = build_model(cone, true);
            let (y, p1, p2) = solved(&model);
            let mmv = MonotoneRule::new(model.clone(), y, THETA, X0).unwrap();
            let zeta = mmv.target();
            let mv = TargetRule::new(model.clone(), p1, p2, zeta).unwrap();
            let h0 = model.market.discount(0.0).unwrap();
            // wealth below the pivot, where the monotone flow lives
            for &t in &[0.0, 0.4, 1.2, 2.0] {
                let ceiling = zeta / model.market.discount(t).unwrap();
                for frac in [-0.5, 0.1, 0.6, 0.95] {
                    let x = ceiling * frac - 0.2;
                    let a = mmv.decide(t, x, None).unwrap();
                    let b = mv.decide(t, x, None).unwrap();
                    let scale = a.investment.norm().max(1.0);
                    assert!(
                        (&a.investment - &b.investment).norm() < 1e-8 * scale,
                        "t={t} x={x}: {:?} vs {:?}",
                        a.investment,
                        b.investment
                    );
                    assert!((a.retention - b.retention).abs() < 1e-8 * a.retention.max(1.0));
                    assert!(!a.clamped);
                }
            }
            let _ = h0;
        }
    }

    #[test]
    fn monotone_clamps_above_target() {
        let model = build_model(ConeConstraint::unconstrained(1).unwrap(), true);
        let (y, _, _) = solved(&model);
        let mmv = MonotoneRule::new(model, y, THETA, X0).unwrap();
        let d = mmv.decide(0.5, 1e6, None).unwrap();
        assert!(d.clamped);
        assert_eq!(d.retention, 0.0);
        assert_eq!(d.investment.norm(), 0.0);
    }

    #[test]
    fn compiled_table_matches_dynamic_rule() {
        let model = build_model(ConeConstraint::nonnegative(1).unwrap(), true);
        let (y, p1, p2) = solved(&model);
        let mmv = Strategy::monotone(model.clone(), y, THETA, X0).unwrap();
        let zeta = match &mmv {
            Strategy::Monotone(r) => r.target(),
            _ => unreachable!(),
        };
        let mv = Strategy::target(model.clone(), p1, p2, zeta).unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| 2.0 * k as f64 / 40.0).collect();
        for strat in [&mmv, &mv] {
            let table = strat.compile(&grid).unwrap();
            for (k, &t) in grid.iter().enumerate() {
                for &x in &[-1.0, 0.3, 1.7, 9.0] {
                    let a = table.decide(k, x, None).unwrap();
                    let b = strat.decide(t, x, None).unwrap();
                    let scale = b.investment.norm().max(1.0);
                    assert!((&a.investment - &b.investment).norm() < 1e-12 * scale);
                    assert!((a.retention - b.retention).abs() < 1e-12 * b.retention.max(1.0));
                    assert_eq!(a.clamped, b.clamped);
                }
            }
        }
    }

    #[test]
    fn values_match_closed_forms() {
        let model = build_model(ConeConstraint::unconstrained(1).unwrap(), true);
        let (y, _, p2) = solved(&model);
        let coeffs = model.market.coefficients_at(0.0, None).unwrap();
        let b = model.insurance.retention_premium();
        let k = coeffs.phi().norm_squared()
            + b * b / (model.insurance.lambda * model.claims.second_moment());
        let horizon = model.market.horizon();
        let h0 = model.market.discount(0.0).unwrap();
        let xs = model.effective_initial_wealth(X0).unwrap();

        let v_mmv = monotone_value(&model, &y, THETA, X0).unwrap();
        let exact = xs * h0 + ((k * horizon).exp() - 1.0) / (2.0 * THETA);
        assert!((v_mmv - exact).abs() < 1e-8, "{v_mmv} vs {exact}");

        let v_mv = classical_value(&model, &p2, THETA, X0).unwrap();
        assert!((v_mv - exact).abs() < 1e-8, "{v_mv} vs {exact}");
    }

    #[test]
    fn frontier_matches_grid_search_and_fixed_point() {
        let model = build_model(ConeConstraint::unconstrained(1).unwrap(), true);
        let (y, p1, p2) = solved(&model);
        let z_hat = optimal_target(&model, &p2, THETA, X0).unwrap();
        let point = frontier_point(&model, &p1, &p2, X0, z_hat).unwrap();

        // the optimal pivot coincides with the monotone rule's target level
        let mmv = MonotoneRule::new(model.clone(), y, THETA, X0).unwrap();
        assert!(
            (point.pivot - mmv.target()).abs() < 1e-7 * mmv.target().abs(),
            "{} vs {}",
            point.pivot,
            mmv.target()
        );

        // supremum of the dual cost over a pivot grid agrees
        let mut best = f64::NEG_INFINITY;
        for i in 0..4000 {
            let zeta = z_hat - 2.0 + 4.0 * i as f64 / 4000.0;
            best = best.max(target_cost(&model, &p1, &p2, X0, z_hat, zeta).unwrap());
        }
        assert!(point.min_variance >= best - 1e-9);
        assert!(point.min_variance <= best + 1e-5);

        // classical value = z - theta/2 * F(z) at the optimal mean
        let v = classical_value(&model, &p2, THETA, X0).unwrap();
        assert!((z_hat - THETA / 2.0 * point.min_variance - v).abs() < 1e-9);
    }

    #[test]
    fn frontier_blocks_unreachable_means() {
        // long-only cone with positive drift: no way to push the mean below
        // risk-free growth
        let model = build_model(ConeConstraint::nonnegative(1).unwrap(), false);
        // eta gap zero and lambda > 0 still leaves retention, so kill claims
        let rates = RateSchedule::constant(0.03, 2.0).unwrap();
        let market = MarketModel::new(
            rates,
            CoefficientField::Deterministic {
                mu: Piecewise::constant(DVector::from_element(1, 0.06)),
                sigma: Piecewise::constant(DMatrix::from_element(1, 1, 0.2)),
            },
            1e-6,
        )
        .unwrap();
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        let insurance = InsuranceParams::new(0.0, 0.25, 0.25, &claims).unwrap();
        let model2 = Model::new(
            market,
            insurance,
            claims,
            ConeConstraint::nonnegative(1).unwrap(),
        )
        .unwrap();
        let p2 = solve_deterministic(Equation::P2, &model2, DT, None).unwrap();
        let p1 = solve_deterministic(Equation::P1, &model2, DT, Some(&p2)).unwrap();
        let base = model2.market.discount(0.0).unwrap()
            * model2.effective_initial_wealth(X0).unwrap();
        assert!(frontier_point(&model2, &p1, &p2, X0, base - 0.5).is_err());
        assert!(frontier_point(&model2, &p1, &p2, X0, base + 0.5).is_ok());
        let at_base = frontier_point(&model2, &p1, &p2, X0, base).unwrap();
        assert_eq!(at_base.min_variance, 0.0);
        let _ = model;
    }

    #[test]
    fn saddle_kernel_matches_deterministic_forms() {
        let model = build_model(ConeConstraint::unconstrained(1).unwrap(), true);
        let (y, _, _) = solved(&model);
        let kernel = DensityKernel::saddle(model.clone(), y.clone()).unwrap();
        let coeffs = model.market.coefficients_at(0.7, None).unwrap();
        let slice = kernel.at(0.7, None).unwrap();
        // eta = -Proj(phi) = -phi unconstrained
        assert!((&slice.eta + coeffs.phi()).norm() < 1e-12);
        // psi_i = b y_i / (lambda E[Y^2])
        let b = model.insurance.retention_premium();
        let expect = b * 1.0 / (model.insurance.lambda * model.claims.second_moment());
        assert!((slice.psi[0] - expect).abs() < 1e-12);
        // positivity floor from the certificates
        let (c_low, c_high) = y.certificates();
        assert!(slice.psi[0] >= -1.0 + c_low / c_high - 1e-12);
    }

    #[test]
    fn perturbations_preserve_admissibility() {
        let model = build_model(ConeConstraint::nonnegative(1).unwrap(), true);
        let (y, _, _) = solved(&model);
        let base = Strategy::monotone(model.clone(), y, THETA, X0).unwrap();
        assert!(Strategy::scaled(base.clone(), -0.5, 1.0).is_err());
        let bumped = Strategy::shifted(
            base.clone(),
            &model.cone,
            DVector::from_element(1, 0.1),
            0.05,
        )
        .unwrap();
        let d = bumped.decide(0.3, 0.5, None).unwrap();
        let plain = base.decide(0.3, 0.5, None).unwrap();
        assert!((d.investment[0] - plain.investment[0] - 0.1).abs() < 1e-14);
        assert!((d.retention - plain.retention - 0.05).abs() < 1e-14);
        assert!(Strategy::shifted(
            base,
            &model.cone,
            DVector::from_element(1, -0.1),
            0.0
        )
        .is_err());

        assert!(DensityKernel::constant(DVector::zeros(1), vec![-1.0]).is_err());
        let k = DensityKernel::constant(DVector::from_element(1, 0.2), vec![-0.5]).unwrap();
        let ks = DensityKernel::scaled(k, 2.0, 3.0).unwrap();
        // scaling pushed the claim tilt to -1.5: rejected at evaluation
        assert!(ks.at(0.0, None).is_err());
    }

    #[test]
    fn retention_is_zero_without_claims() {
        let rates = RateSchedule::constant(0.03, 2.0).unwrap();
        let market = MarketModel::new(
            rates,
            CoefficientField::Deterministic {
                mu: Piecewise::constant(DVector::from_element(1, 0.06)),
                sigma: Piecewise::constant(DMatrix::from_element(1, 1, 0.2)),
            },
            1e-6,
        )
        .unwrap();
        let claims = ClaimDistribution::degenerate(1.0).unwrap();
        let insurance = InsuranceParams::new(0.0, 0.25, 0.3, &claims).unwrap();
        let model = Model::new(
            market,
            insurance,
            claims,
            ConeConstraint::unconstrained(1).unwrap(),
        )
        .unwrap();
        let y = solve_deterministic(Equation::Y, &model, DT, None).unwrap();
        let mmv = MonotoneRule::new(model, y, THETA, X0).unwrap();
        let d = mmv.decide(0.5, 0.2, None).unwrap();
        assert_eq!(d.retention, 0.0);
        assert!(d.investment.norm() > 0.0);
    }
}
