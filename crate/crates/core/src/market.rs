//! Market data: rates, appreciation and volatility schedules, and the
//! optional stochastic factor driving them.
//!
//! Dimensions follow one convention throughout the crate: `m` risky assets,
//! `n >= m` Brownian coordinates, so an investment `pi` lives in R^m, the
//! volatility matrix `sigma` is m x n with `sigma * sigma'` uniformly
//! positive definite, the appreciation vector `mu` is in R^m, and the market
//! price of risk
//!
//! ```text
//!   phi = sigma' * (sigma * sigma')^{-1} * mu
//! ```
//!
//! is the minimal-norm solution of `sigma * phi = mu` in R^n.
//!
//! Coefficients are either piecewise-constant in time or smooth bounded maps
//! of a mean-reverting factor. In the factor case the deviation from the
//! base value is squashed through `tanh`, so coefficients stay inside
//! explicit bands and the volatility Gram matrix keeps a positive floor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant value on `[0, horizon)`, right-open segments.
/// `breaks[0] == 0`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piecewise<T> {
    breaks: Vec<f64>,
    values: Vec<T>,
}

impl<T: Clone> Piecewise<T> {
    pub fn new(breaks: Vec<f64>, values: Vec<T>, horizon: f64) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(Error::invalid(
                "schedule",
                format!(
                    "{} breakpoints vs {} values",
                    breaks.len(),
                    values.len()
                ),
            ));
        }
        if breaks[0] != 0.0 {
            return Err(Error::invalid("schedule", "first breakpoint must be 0"));
        }
        for w in breaks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("schedule", "breakpoints must increase"));
            }
        }
        if *breaks.last().unwrap() >= horizon {
            return Err(Error::invalid(
                "schedule",
                "last breakpoint must lie before the horizon",
            ));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(value: T) -> Self {
        Self {
            breaks: vec![0.0],
            values: vec![value],
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Segment index containing `t`; the last segment is right-closed.
    fn segment(&self, t: f64) -> usize {
        match self
            .breaks
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn value_at(&self, t: f64) -> &T {
        &self.values[self.segment(t)]
    }
}

/// Piecewise-constant short rate with exact integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    horizon: f64,
    rates: Piecewise<f64>,
}

impl RateSchedule {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid("rates", format!("horizon {horizon}")));
        }
        for v in &values {
            if !v.is_finite() {
                return Err(Error::invalid("rates", "non-finite rate"));
            }
        }
        Ok(Self {
            horizon,
            rates: Piecewise::new(breaks, values, horizon)?,
        })
    }

    pub fn constant(rate: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rate], horizon)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        *self.rates.value_at(t)
    }

    pub fn breaks(&self) -> &[f64] {
        self.rates.breaks()
    }

    fn check_domain(&self, t: f64, what: &'static str) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfRange {
                what,
                value: t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(())
    }

    /// Exact `int_a^b r(s) ds` for `0 <= a <= b <= horizon`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        self.check_domain(a, "rate integral lower bound")?;
        self.check_domain(b, "rate integral upper bound")?;
        if b < a {
            return Err(Error::invalid("rates", "integral bounds reversed"));
        }
        let breaks = self.rates.breaks();
        let values = self.rates.values();
        let mut total = 0.0;
        for (i, &r) in values.iter().enumerate() {
            let seg_lo = breaks[i];
            let seg_hi = if i + 1 < breaks.len() {
                breaks[i + 1]
            } else {
                self.horizon
            };
            let lo = seg_lo.max(a);
            let hi = seg_hi.min(b);
            if hi > lo {
                total += r * (hi - lo);
            }
        }
        Ok(total)
    }

    /// Compounding factor `h_t = exp(int_t^T r)`; equals 1 at the horizon.
    pub fn discount(&self, t: f64) -> Result<f64> {
        self.check_domain(t, "discount time")?;
        Ok(self.integral(t, self.horizon)?.exp())
    }

    /// Annuity `A_t = int_t^T exp(-int_t^s r) ds`, exact per segment.
    /// Converts a constant drift into an equivalent wealth shift.
    pub fn annuity(&self, t: f64) -> Result<f64> {
        self.check_domain(t, "annuity time")?;
        let breaks = self.rates.breaks();
        let values = self.rates.values();
        let mut total = 0.0;
        let mut disc = 1.0; // exp(-int_t^{segment start} r)
        for (i, &r) in values.iter().enumerate() {
            let seg_lo = breaks[i];
            let seg_hi = if i + 1 < breaks.len() {
                breaks[i + 1]
            } else {
                self.horizon
            };
            let lo = seg_lo.max(t);
            let hi = seg_hi;
            if hi <= lo {
                continue;
            }
            let len = hi - lo;
            let piece = if r == 0.0 {
                len
            } else {
                (1.0 - (-r * len).exp()) / r
            };
            total += disc * piece;
            disc *= (-r * len).exp();
        }
        Ok(total)
    }
}

/// Mean-reverting factor with linear claim response and squashed
/// coefficient maps.
///
/// ```text
///   dF = kappa .* (mean - F) dt + beta dW + response * y  (at a claim of size y)
///   mu(F)    = mu_base + mu_amplitude * tanh(mu_loading * F / mu_amplitude)
///   sigma(F) = sigma_base * (1 + sigma_amplitude * tanh(sigma_loading' F))
/// ```
///
/// `sigma_amplitude < 1` keeps the Gram floor `(1 - sigma_amplitude)^2 *
/// lambda_min(sigma_base * sigma_base')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub initial: DVector<f64>,
    pub mean_reversion: DVector<f64>,
    pub long_run_mean: DVector<f64>,
    /// d x n, shares the Brownian motion with the asset market.
    pub diffusion: DMatrix<f64>,
    /// Factor shift per unit claim size; zero disables jump response.
    pub jump_response: DVector<f64>,
    pub mu_base: DVector<f64>,
    /// m x d loading of the factor into the appreciation map.
    pub mu_loading: DMatrix<f64>,
    /// Max deviation of each `mu` coordinate from its base; 0 freezes `mu`.
    pub mu_amplitude: f64,
    /// m x n base volatility.
    pub sigma_base: DMatrix<f64>,
    pub sigma_loading: DVector<f64>,
    /// Relative volatility band, in `[0, 1)`.
    pub sigma_amplitude: f64,
}

impl FactorModel {
    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    fn validate(&self, n_assets: usize, n_brownian: usize) -> Result<()> {
        let d = self.dim();
        let shapes_ok = self.mean_reversion.len() == d
            && self.long_run_mean.len() == d
            && self.diffusion.nrows() == d
            && self.diffusion.ncols() == n_brownian
            && self.jump_response.len() == d
            && self.mu_base.len() == n_assets
            && self.mu_loading.nrows() == n_assets
            && self.mu_loading.ncols() == d
            && self.sigma_base.nrows() == n_assets
            && self.sigma_base.ncols() == n_brownian
            && self.sigma_loading.len() == d;
        if !shapes_ok {
            return Err(Error::invalid("factor model", "inconsistent shapes"));
        }
        if d == 0 {
            return Err(Error::invalid("factor model", "factor dimension 0"));
        }
        if !(self.mu_amplitude >= 0.0 && self.mu_amplitude.is_finite()) {
            return Err(Error::invalid("factor model", "mu_amplitude < 0"));
        }
        if !(0.0..1.0).contains(&self.sigma_amplitude) {
            return Err(Error::invalid(
                "factor model",
                "sigma_amplitude must be in [0, 1)",
            ));
        }
        if self.mean_reversion.iter().any(|k| *k < 0.0) {
            return Err(Error::invalid("factor model", "negative mean reversion"));
        }
        Ok(())
    }

    pub fn mu(&self, f: &DVector<f64>) -> DVector<f64> {
        if self.mu_amplitude == 0.0 {
            return self.mu_base.clone();
        }
        let raw = &self.mu_loading * f;
        let amp = self.mu_amplitude;
        DVector::from_fn(self.mu_base.len(), |i, _| {
            self.mu_base[i] + amp * (raw[i] / amp).tanh()
        })
    }

    pub fn sigma(&self, f: &DVector<f64>) -> DMatrix<f64> {
        let scale = 1.0 + self.sigma_amplitude * self.sigma_loading.dot(f).tanh();
        &self.sigma_base * scale
    }

    pub fn drift(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            self.mean_reversion[i] * (self.long_run_mean[i] - f[i])
        })
    }

    /// Factor state right after a claim of size `y`.
    pub fn jump_shift(&self, f: &DVector<f64>, y: f64) -> DVector<f64> {
        f + &self.jump_response * y
    }

    pub fn has_jump_response(&self) -> bool {
        self.jump_response.iter().any(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoefficientField {
    Deterministic {
        mu: Piecewise<DVector<f64>>,
        sigma: Piecewise<DMatrix<f64>>,
    },
    Factor(FactorModel),
}

/// Market coefficients frozen at one `(t, factor)` slice.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub rate: f64,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    phi: DVector<f64>,
    gram_chol: Cholesky<f64, Dyn>,
}

impl Coefficients {
    fn build(rate: f64, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let gram = &sigma * sigma.transpose();
        let gram_chol = Cholesky::new(gram).ok_or_else(|| {
            Error::invalid("market", "sigma * sigma' not positive definite")
        })?;
        let phi = sigma.transpose() * gram_chol.solve(&mu);
        Ok(Self {
            rate,
            mu,
            sigma,
            phi,
            gram_chol,
        })
    }

    /// Market price of risk; satisfies `sigma * phi = mu`.
    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    /// Recovers the unique `beta` with `sigma' * beta = xi` for `xi` in the
    /// row space of `sigma`; maps projected directions back to portfolios.
    pub fn witness(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(&(&self.sigma * xi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    horizon: f64,
    rates: RateSchedule,
    coefficients: CoefficientField,
    n_assets: usize,
    n_brownian: usize,
    /// Uniform lower bound certified for `lambda_min(sigma * sigma')`.
    gram_floor: f64,
}

impl MarketModel {
    pub fn new(
        rates: RateSchedule,
        coefficients: CoefficientField,
        gram_floor: f64,
    ) -> Result<Self> {
        let horizon = rates.horizon();
        if !(gram_floor > 0.0) {
            return Err(Error::invalid("market", "gram floor must be positive"));
        }
        let (n_assets, n_brownian) = match &coefficients {
            CoefficientField::Deterministic { mu, sigma } => {
                let m = mu.values()[0].len();
                let n = sigma.values()[0].ncols();
                for v in mu.values() {
                    if v.len() != m {
                        return Err(Error::invalid("market", "mu dimension varies"));
                    }
                }
                for s in sigma.values() {
                    if s.nrows() != m || s.ncols() != n {
                        return Err(Error::invalid("market", "sigma shape varies"));
                    }
                    check_gram_floor(s, gram_floor)?;
                }
                (m, n)
            }
            CoefficientField::Factor(f) => {
                let m = f.mu_base.len();
                let n = f.sigma_base.ncols();
                f.validate(m, n)?;
                // worst case over the squashing band
                let worst = &f.sigma_base * (1.0 - f.sigma_amplitude);
                check_gram_floor(&worst, gram_floor)?;
                (m, n)
            }
        };
        if n_assets == 0 || n_brownian < n_assets {
            return Err(Error::invalid(
                "market",
                format!("need 1 <= assets ({n_assets}) <= brownian dims ({n_brownian})"),
            ));
        }
        Ok(Self {
            horizon,
            rates,
            coefficients,
            n_assets,
            n_brownian,
            gram_floor,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_brownian(&self) -> usize {
        self.n_brownian
    }

    pub fn rates(&self) -> &RateSchedule {
        &self.rates
    }

    pub fn discount(&self, t: f64) -> Result<f64> {
        self.rates.discount(t)
    }

    pub fn annuity(&self, t: f64) -> Result<f64> {
        self.rates.annuity(t)
    }

    pub fn factor(&self) -> Option<&FactorModel> {
        match &self.coefficients {
            CoefficientField::Factor(f) => Some(f),
            CoefficientField::Deterministic { .. } => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.factor().is_none()
    }

    /// All schedule breakpoints (rates and coefficients), sorted, without
    /// the endpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.rates.breaks().to_vec();
        if let CoefficientField::Deterministic { mu, sigma } = &self.coefficients {
            out.extend_from_slice(mu.breaks());
            out.extend_from_slice(sigma.breaks());
        }
        out.retain(|t| *t > 0.0);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Coefficient slice at `(t, factor)`. The factor argument is required
    /// exactly when the model is factor-driven.
    pub fn coefficients_at(&self, t: f64, factor: Option<&DVector<f64>>) -> Result<Coefficients> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfRange {
                what: "coefficient time",
                value: t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        let rate = self.rates.rate_at(t.min(self.horizon * (1.0 - 1e-16)));
        match &self.coefficients {
            CoefficientField::Deterministic { mu, sigma } => {
                Coefficients::build(rate, mu.value_at(t).clone(), sigma.value_at(t).clone())
            }
            CoefficientField::Factor(fm) => {
                let f = factor.ok_or_else(|| {
                    Error::invalid("market", "factor state required for factor-driven model")
                })?;
                if f.len() != fm.dim() {
                    return Err(Error::invalid("market", "factor state dimension mismatch"));
                }
                Coefficients::build(rate, fm.mu(f), fm.sigma(f))
            }
        }
    }
}

fn check_gram_floor(sigma: &DMatrix<f64>, floor: f64) -> Result<()> {
    let gram = sigma * sigma.transpose();
    let eigs = gram.symmetric_eigenvalues();
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < floor {
        return Err(Error::invalid(
            "market",
            format!("lambda_min(sigma sigma') = {min:.3e} below floor {floor:.3e}"),
        ));
    }
    Ok(())
}

/// Full static model: market, insurance book, claim law and strategy cone.
#[derive(Debug, Clone)]
pub struct Model {
    pub market: MarketModel,
    pub insurance: crate::insurance::InsuranceParams,
    pub claims: crate::claims::ClaimDistribution,
    pub cone: crate::cone::ConeConstraint,
}

impl Model {
    pub fn new(
        market: MarketModel,
        insurance: crate::insurance::InsuranceParams,
        claims: crate::claims::ClaimDistribution,
        cone: crate::cone::ConeConstraint,
    ) -> Result<Self> {
        if cone.dim() != market.n_assets() {
            return Err(Error::invalid(
                "model",
                format!(
                    "cone dimension {} vs {} assets",
                    cone.dim(),
                    market.n_assets()
                ),
            ));
        }
        Ok(Self {
            market,
            insurance,
            claims,
            cone,
        })
    }

    /// Initial wealth adjusted for the full-ceding drift `a`: the dynamics
    /// with drift `b q + a` and start `x` price identically to the driftless
    /// (`a = 0`) dynamics started at `x + a * annuity(0)`. All value and
    /// target formulas consume this shifted wealth.
    pub fn effective_initial_wealth(&self, x: f64) -> Result<f64> {
        Ok(x + self.insurance.full_ceding_drift() * self.market.annuity(0.0)?)
    }

    /// Shifted wealth at time `t` for the same reduction.
    pub fn shifted_wealth(&self, t: f64, x: f64) -> Result<f64> {
        Ok(x + self.insurance.full_ceding_drift() * self.market.annuity(t)?)
    }
}
