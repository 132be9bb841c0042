//! JSON experiment configuration.
//!
//! The schema mirrors the validated model constructors instead of the
//! internal types, so every cross-field rule (loading order, cone dimension,
//! probability mass, volatility floor) still runs on the parse result. A
//! config serializes back to the exact document it came from: experiments
//! are reproducible from the one file.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bsde::lsmc::LsmcParams;
use crate::claims::{ClaimAtom, ClaimDistribution};
use crate::cone::{ConeConstraint, CoordFlag};
use crate::error::{Error, Result};
use crate::insurance::InsuranceParams;
use crate::market::{CoefficientField, FactorModel, MarketModel, Model, Piecewise, RateSchedule};

/// Scalar or vector quantity that is either constant in time or
/// piecewise-constant on explicit segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule<T> {
    Constant(T),
    Piecewise { breaks: Vec<f64>, values: Vec<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub horizon: f64,
    pub rates: Schedule<f64>,
    pub coefficients: CoefficientsConfig,
    /// Certified lower bound for the eigenvalues of `sigma sigma'`.
    #[serde(default = "default_gram_floor")]
    pub gram_floor: f64,
}

fn default_gram_floor() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientsConfig {
    Deterministic {
        mu: Schedule<Vec<f64>>,
        /// Row-major `m x n` volatility.
        sigma: Schedule<Vec<Vec<f64>>>,
    },
    Factor {
        initial: Vec<f64>,
        mean_reversion: Vec<f64>,
        long_run_mean: Vec<f64>,
        diffusion: Vec<Vec<f64>>,
        jump_response: Vec<f64>,
        mu_base: Vec<f64>,
        mu_loading: Vec<Vec<f64>>,
        mu_amplitude: f64,
        sigma_base: Vec<Vec<f64>>,
        sigma_loading: Vec<f64>,
        sigma_amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsuranceConfig {
    pub lambda: f64,
    pub eta_insurer: f64,
    pub eta_reinsurer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimsConfig {
    pub atoms: Vec<AtomConfig>,
    /// Defaults to the largest atom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub size: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeConfig {
    /// Whole space, dimension taken from the market.
    Unconstrained,
    /// No short positions, dimension taken from the market.
    Nonnegative,
    /// Mixed orthant, one flag per asset.
    Orthant { flags: Vec<CoordFlag> },
    /// Conic hull of the given directions.
    Generators { directions: Vec<Vec<f64>> },
    /// `{pi : rows * pi >= 0}`.
    Halfspaces { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Backward integration step; defaults to `horizon / 512`.
    pub dt: Option<f64>,
    pub lsmc: LsmcConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            lsmc: LsmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsmcConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub degree: usize,
    pub ridge: f64,
    pub floor: f64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        let p = LsmcParams::default();
        Self {
            n_paths: p.n_paths,
            n_steps: p.n_steps,
            seed: p.seed,
            degree: p.degree,
            ridge: p.ridge,
            floor: p.floor,
        }
    }
}

impl LsmcConfig {
    pub fn to_params(&self) -> LsmcParams {
        LsmcParams {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            seed: self.seed,
            degree: self.degree,
            ridge: self.ridge,
            floor: self.floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub n_paths: usize,
    /// Simulation grid steps for the headline estimates.
    pub sim_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Acceptance band width in standard errors.
    pub band: f64,
    /// Path count for the per-perturbation saddle runs.
    pub saddle_paths: usize,
    pub saddle_steps: usize,
    /// Labels to keep from the stock perturbation libraries; all if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<Vec<String>>,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            sim_steps: 2000,
            seed: 0xf00d,
            antithetic: false,
            band: 3.0,
            saddle_paths: 20_000,
            saddle_steps: 500,
            perturbations: None,
        }
    }
}

/// Complete experiment description; one JSON document per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    pub insurance: InsuranceConfig,
    pub claims: ClaimsConfig,
    pub cone: ConeConfig,
    /// Risk aversion, strictly positive.
    pub theta: f64,
    pub initial_wealth: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn to_matrix(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cheap scalar checks; structural rules run in [`Self::build_model`].
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!(
                "theta {} must be finite and positive",
                self.theta
            )));
        }
        if !self.initial_wealth.is_finite() {
            return Err(Error::Config("initial_wealth must be finite".into()));
        }
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0 && dt < self.market.horizon) {
                return Err(Error::Config(format!(
                    "solver dt {dt} must lie in (0, horizon)"
                )));
            }
        }
        if self.verification.n_paths < 2 || self.verification.saddle_paths < 2 {
            return Err(Error::Config("verification path counts must be >= 2".into()));
        }
        if self.verification.sim_steps < 1 || self.verification.saddle_steps < 1 {
            return Err(Error::Config("verification step counts must be >= 1".into()));
        }
        if self.verification.antithetic
            && (self.verification.n_paths % 2 != 0 || self.verification.saddle_paths % 2 != 0)
        {
            return Err(Error::Config(
                "antithetic estimation needs even path counts".into(),
            ));
        }
        if !(self.verification.band > 0.0) {
            return Err(Error::Config("verification band must be positive".into()));
        }
        Ok(())
    }

    pub fn solver_dt(&self) -> f64 {
        self.solver
            .dt
            .unwrap_or(self.market.horizon / 512.0)
    }

    fn build_rates(&self) -> Result<RateSchedule> {
        let horizon = self.market.horizon;
        match &self.market.rates {
            Schedule::Constant(r) => RateSchedule::constant(*r, horizon),
            Schedule::Piecewise { breaks, values } => {
                RateSchedule::new(breaks.clone(), values.clone(), horizon)
            }
        }
    }

    fn build_coefficients(&self) -> Result<CoefficientField> {
        match &self.market.coefficients {
            CoefficientsConfig::Deterministic { mu, sigma } => {
                let horizon = self.market.horizon;
                let mu = match mu {
                    Schedule::Constant(v) => {
                        Piecewise::constant(DVector::from_row_slice(v))
                    }
                    Schedule::Piecewise { breaks, values } => Piecewise::new(
                        breaks.clone(),
                        values.iter().map(|v| DVector::from_row_slice(v)).collect(),
                        horizon,
                    )?,
                };
                let sigma = match sigma {
                    Schedule::Constant(rows) => {
                        Piecewise::constant(to_matrix(rows, "sigma")?)
                    }
                    Schedule::Piecewise { breaks, values } => Piecewise::new(
                        breaks.clone(),
                        values
                            .iter()
                            .map(|rows| to_matrix(rows, "sigma"))
                            .collect::<Result<Vec<_>>>()?,
                        horizon,
                    )?,
                };
                Ok(CoefficientField::Deterministic { mu, sigma })
            }
            CoefficientsConfig::Factor {
                initial,
                mean_reversion,
                long_run_mean,
                diffusion,
                jump_response,
                mu_base,
                mu_loading,
                mu_amplitude,
                sigma_base,
                sigma_loading,
                sigma_amplitude,
            } => Ok(CoefficientField::Factor(FactorModel {
                initial: DVector::from_row_slice(initial),
                mean_reversion: DVector::from_row_slice(mean_reversion),
                long_run_mean: DVector::from_row_slice(long_run_mean),
                diffusion: to_matrix(diffusion, "factor diffusion")?,
                jump_response: DVector::from_row_slice(jump_response),
                mu_base: DVector::from_row_slice(mu_base),
                mu_loading: to_matrix(mu_loading, "mu_loading")?,
                mu_amplitude: *mu_amplitude,
                sigma_base: to_matrix(sigma_base, "sigma_base")?,
                sigma_loading: DVector::from_row_slice(sigma_loading),
                sigma_amplitude: *sigma_amplitude,
            })),
        }
    }

    fn build_cone(&self, n_assets: usize) -> Result<ConeConstraint> {
        match &self.cone {
            ConeConfig::Unconstrained => ConeConstraint::unconstrained(n_assets),
            ConeConfig::Nonnegative => ConeConstraint::nonnegative(n_assets),
            ConeConfig::Orthant { flags } => ConeConstraint::orthant(flags.clone()),
            ConeConfig::Generators { directions } => ConeConstraint::generators(
                directions
                    .iter()
                    .map(|d| DVector::from_row_slice(d))
                    .collect(),
            ),
            ConeConfig::Halfspaces { rows } => {
                ConeConstraint::halfspaces(to_matrix(rows, "halfspaces")?)
            }
        }
    }

    /// Builds the fully validated model.
    pub fn build_model(&self) -> Result<Model> {
        self.validate()?;
        let rates = self.build_rates()?;
        let coefficients = self.build_coefficients()?;
        let market = MarketModel::new(rates, coefficients, self.market.gram_floor)?;
        let atoms: Vec<ClaimAtom> = self
            .claims
            .atoms
            .iter()
            .map(|a| ClaimAtom {
                size: a.size,
                prob: a.prob,
            })
            .collect();
        let max_size = self.claims.max_size.unwrap_or_else(|| {
            atoms.iter().map(|a| a.size).fold(0.0, f64::max)
        });
        let claims = ClaimDistribution::new(atoms, max_size)?;
        let insurance = InsuranceParams::new(
            self.insurance.lambda,
            self.insurance.eta_insurer,
            self.insurance.eta_reinsurer,
            &claims,
        )?;
        let cone = self.build_cone(market.n_assets())?;
        Model::new(market, insurance, claims, cone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> &'static str {
        r#"{
            "market": {
                "horizon": 2.0,
                "rates": 0.03,
                "coefficients": {
                    "kind": "deterministic",
                    "mu": [0.06],
                    "sigma": [[0.2]]
                }
            },
            "insurance": {"lambda": 2.0, "eta_insurer": 0.2, "eta_reinsurer": 0.3},
            "claims": {"atoms": [{"size": 1.0, "prob": 1.0}]},
            "cone": {"kind": "unconstrained"},
            "theta": 0.7,
            "initial_wealth": 1.3
        }"#
    }

    #[test]
    fn parses_and_builds_minimal_config() {
        let cfg = ExperimentConfig::from_json_str(sample_json()).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!(model.market.n_assets(), 1);
        assert!(model.market.is_deterministic());
        assert_eq!(cfg.verification.n_paths, 100_000);
        assert!((cfg.solver_dt() - 2.0 / 512.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::from_json_str(sample_json()).unwrap();
        let text = cfg.to_json_pretty();
        let again = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn piecewise_and_orthant_variants_round_trip() {
        let json = r#"{
            "market": {
                "horizon": 1.5,
                "rates": {"breaks": [0.0, 0.5], "values": [0.05, 0.01]},
                "coefficients": {
                    "kind": "deterministic",
                    "mu": {"breaks": [0.0, 0.75], "values": [[0.05, 0.02], [0.03, 0.04]]},
                    "sigma": [[0.2, 0.0, 0.01], [0.05, 0.3, 0.0]]
                },
                "gram_floor": 1e-6
            },
            "insurance": {"lambda": 1.0, "eta_insurer": 0.25, "eta_reinsurer": 0.25},
            "claims": {"atoms": [{"size": 0.5, "prob": 0.7}, {"size": 2.0, "prob": 0.3}]},
            "cone": {"kind": "orthant", "flags": ["Nonnegative", "Free"]},
            "theta": 1.1,
            "initial_wealth": 0.0,
            "solver": {"dt": 0.125},
            "verification": {"n_paths": 5000, "sim_steps": 200}
        }"#;
        let cfg = ExperimentConfig::from_json_str(json).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!(model.market.n_assets(), 2);
        assert_eq!(model.market.n_brownian(), 3);
        assert_eq!(cfg.verification.seed, VerificationConfig::default().seed);
        let again = ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn factor_config_builds() {
        let json = r#"{
            "market": {
                "horizon": 1.0,
                "rates": 0.02,
                "coefficients": {
                    "kind": "factor",
                    "initial": [0.0],
                    "mean_reversion": [1.0],
                    "long_run_mean": [0.0],
                    "diffusion": [[0.1]],
                    "jump_response": [0.0],
                    "mu_base": [0.05],
                    "mu_loading": [[0.2]],
                    "mu_amplitude": 0.03,
                    "sigma_base": [[0.25]],
                    "sigma_loading": [1.0],
                    "sigma_amplitude": 0.2
                },
                "gram_floor": 0.01
            },
            "insurance": {"lambda": 0.5, "eta_insurer": 0.1, "eta_reinsurer": 0.2},
            "claims": {"atoms": [{"size": 1.0, "prob": 1.0}], "max_size": 1.0},
            "cone": {"kind": "nonnegative"},
            "theta": 0.5,
            "initial_wealth": 2.0
        }"#;
        let cfg = ExperimentConfig::from_json_str(json).unwrap();
        let model = cfg.build_model().unwrap();
        assert!(!model.market.is_deterministic());
        assert_eq!(ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_scalars_and_unknown_fields() {
        let cfg = ExperimentConfig::from_json_str(sample_json()).unwrap();
        let mut bad = cfg.clone();
        bad.theta = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.insurance.eta_reinsurer = 0.1; // cheaper than the insurer's loading
        assert!(bad.build_model().is_err());
        let with_unknown = sample_json().replace("\"theta\"", "\"thata\"");
        assert!(ExperimentConfig::from_json_str(&with_unknown).is_err());
        let mut bad = cfg;
        bad.solver.dt = Some(5.0);
        assert!(bad.validate().is_err());
    }
}
