//! Constrained monotone mean-variance investment-reinsurance under a
//! compound-Poisson surplus with a multi-asset diffusion market.
//!
//! The library is organized around four layers:
//!
//! * model data: claim-size distributions, insurance loadings, rate and
//!   coefficient schedules, optional mean-reverting factor ([`claims`],
//!   [`insurance`], [`market`]);
//! * convex machinery: projections onto the volatility-scaled strategy cone
//!   and the optimal retention ratio ([`cone`]);
//! * backward equations: the scalar value-weight equations solved either by
//!   a fourth-order deterministic integrator or by least-squares Monte Carlo
//!   regression on the factor ([`bsde`]);
//! * strategies and verification: feedback investment/retention rules, the
//!   density tilts that close the saddle point, the efficient frontier, and
//!   simulation-based checks of values, identities and saddle inequalities
//!   ([`strategy`], [`simulate`], [`verify`]).
//!
//! [`config`] maps a JSON experiment description onto model objects.

pub mod bsde;
pub mod claims;
pub mod cone;
pub mod config;
pub mod error;
pub mod insurance;
pub mod market;
pub mod simulate;
pub mod strategy;
pub mod verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use claims::ClaimDistribution;
pub use cone::{project_cone, rho_mmv, ConeConstraint, ProjectionResult};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use insurance::InsuranceParams;
pub use market::{MarketModel, Model};
pub use strategy::{CompiledKernel, CompiledStrategy, Decision, DensityKernel, Strategy};
