//! Backward integration of the scalar equations under deterministic
//! coefficient schedules.
//!
//! With no factor state the diffusion and jump components of every solution
//! vanish and each equation is a scalar ODE in time, integrated here by
//! classical fourth-order Runge-Kutta from the terminal value 1.
//!
//! Coefficients are frozen once per step at the step midpoint. That is exact
//! (not an approximation) as long as every schedule breakpoint lands on a
//! grid node, which the solver validates up front; it keeps one Cholesky
//! factorization per step instead of three.
//!
//! The above-target equation couples to the below-target one through its
//! retention objective; the caller passes the solved companion and stage
//! values are read through its cubic dense output, preserving fourth order.

use nalgebra::DVector;

use crate::bsde::drivers::{self, DriverInputs};
use crate::bsde::{BsdeSolution, Equation, GridData, SolutionData};
use crate::error::{Error, Result};
use crate::market::Model;

/// Relative slack for "dt divides the horizon" and breakpoint alignment.
const GRID_ALIGN_TOL: f64 = 1e-9;

/// Deepest step-halving level before a positivity failure is fatal.
const MAX_HALVINGS: u32 = 12;

/// Solves one backward equation on the uniform grid with spacing `dt`.
///
/// `companion` carries the below-target solution when `equation` is `P1`
/// and must sit on the same grid; every other equation takes none.
pub fn solve_deterministic(
    equation: Equation,
    model: &Model,
    dt: f64,
    companion: Option<&BsdeSolution>,
) -> Result<BsdeSolution> {
    if model.market.factor().is_some() {
        return Err(Error::invalid(
            "ode solver",
            "factor-driven coefficients need the regression solver",
        ));
    }
    let horizon = model.market.horizon();
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::invalid("ode solver", format!("bad step size {dt}")));
    }
    let steps = (horizon / dt).round() as usize;
    if steps == 0 || (steps as f64 * dt - horizon).abs() > GRID_ALIGN_TOL * horizon.max(1.0) {
        return Err(Error::invalid(
            "ode solver",
            format!("step {dt} does not divide horizon {horizon}"),
        ));
    }
    for bp in model.market.breakpoints() {
        let k = (bp / dt).round();
        if (k * dt - bp).abs() > GRID_ALIGN_TOL * horizon.max(1.0) {
            return Err(Error::invalid(
                "ode solver",
                format!("schedule breakpoint {bp} not on the grid"),
            ));
        }
    }
    match (equation, companion) {
        (Equation::P1, Some(c)) => {
            if c.equation() != Equation::P2 {
                return Err(Error::invalid("ode solver", "companion must be a P2 solution"));
            }
            if !c.is_deterministic()
                || c.grid().len() != steps + 1
                || (c.horizon() - horizon).abs() > GRID_ALIGN_TOL * horizon.max(1.0)
            {
                return Err(Error::invalid("ode solver", "companion grid mismatch"));
            }
        }
        (Equation::P1, None) => {
            return Err(Error::invalid(
                "ode solver",
                "above-target equation needs the below-target solution",
            ))
        }
        (_, Some(_)) => {
            return Err(Error::invalid("ode solver", "companion only applies to P1"));
        }
        _ => {}
    }

    let grid: Vec<f64> = (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect();
    let zero_diffusion = DVector::zeros(model.market.n_brownian());
    let zero_jumps = vec![0.0; model.claims.len()];

    let rate_of = |t: f64, v: f64, inputs: &DriverInputs| -> Result<f64> {
        match equation {
            Equation::P => Ok(-drivers::driver_p(v, &zero_diffusion, &zero_jumps, inputs)?),
            Equation::P2 => Ok(-drivers::driver_p2_full(
                v,
                &zero_diffusion,
                &zero_jumps,
                inputs,
            )?),
            Equation::P1 => {
                let p2 = companion.unwrap().eval_hermite(t)?;
                Ok(-drivers::driver_p1_full(
                    v,
                    &zero_diffusion,
                    &zero_jumps,
                    p2,
                    &zero_jumps,
                    inputs,
                )?)
            }
            Equation::Y => drivers::driver_y(v, &zero_diffusion, &zero_jumps, inputs),
        }
    };

    let mut values = vec![0.0; steps + 1];
    values[steps] = 1.0;
    for k in (0..steps).rev() {
        let (t_lo, t_hi) = (grid[k], grid[k + 1]);
        let coeffs = model
            .market
            .coefficients_at(0.5 * (t_lo + t_hi), None)?;
        let inputs = DriverInputs {
            coeffs: &coeffs,
            cone: &model.cone,
            claims: &model.claims,
            insurance: &model.insurance,
        };
        let f = |t: f64, v: f64| rate_of(t, v, &inputs);
        values[k] = advance(&f, t_hi, t_lo, values[k + 1], 0)?;
    }

    // node derivatives for dense output, from the segment starting at the node
    let mut derivs = vec![0.0; steps + 1];
    for k in 0..=steps {
        let coeffs = model.market.coefficients_at(grid[k], None)?;
        let inputs = DriverInputs {
            coeffs: &coeffs,
            cone: &model.cone,
            claims: &model.claims,
            insurance: &model.insurance,
        };
        derivs[k] = rate_of(grid[k], values[k], &inputs)?;
    }

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
            n_brownian: model.market.n_brownian(),
            n_atoms: model.claims.len(),
        }),
        c_low,
        c_high,
        0.0,
    )
}

/// One backward step from `(t_hi, v)` to `t_lo`, halving the substep until
/// the result stays positive and finite.
fn advance<F: Fn(f64, f64) -> Result<f64>>(
    f: &F,
    t_hi: f64,
    t_lo: f64,
    v: f64,
    depth: u32,
) -> Result<f64> {
    let attempt = rk4_once(f, t_hi, t_lo, v);
    match attempt {
        Ok(next) if next > 0.0 && next.is_finite() => Ok(next),
        _ if depth < MAX_HALVINGS => {
            let mid = 0.5 * (t_hi + t_lo);
            let half = advance(f, t_hi, mid, v, depth + 1)?;
            advance(f, mid, t_lo, half, depth + 1)
        }
        Ok(next) => Err(Error::positivity(
            "ode solver",
            format!("value {next} at t={t_lo} after {MAX_HALVINGS} halvings"),
        )),
        Err(e) => Err(e),
    }
}

fn rk4_once<F: Fn(f64, f64) -> Result<f64>>(f: &F, t_hi: f64, t_lo: f64, v: f64) -> Result<f64> {
    let h = t_lo - t_hi; // negative: integrating backward
    let t_mid = 0.5 * (t_hi + t_lo);
    let k1 = f(t_hi, v)?;
    let k2 = f(t_mid, v + 0.5 * h * k1)?;
    let k3 = f(t_mid, v + 0.5 * h * k2)?;
    let k4 = f(t_lo, v + h * k3)?;
    Ok(v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}
