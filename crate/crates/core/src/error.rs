use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Model data rejected at construction (probabilities, loadings, shapes).
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Evaluation outside the domain an object was built for.
    #[error("{what} out of range: {value} not in [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A quantity that must stay strictly positive failed to.
    #[error("positivity lost in {where_}: {why}")]
    Positivity { where_: &'static str, why: String },

    /// Strategy or density tilt violated an admissibility requirement.
    #[error("inadmissible {what}: {why}")]
    Admissibility { what: &'static str, why: String },

    /// Numerical solver could not certify its result.
    #[error("solver failure in {where_}: {why}")]
    Solver { where_: &'static str, why: String },

    /// Regression system unusable even after degree reduction.
    #[error("regression failure: {0}")]
    Regression(String),

    /// A Monte Carlo verification check failed its bound.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }

    pub fn solver(where_: &'static str, why: impl Into<String>) -> Self {
        Error::Solver {
            where_,
            why: why.into(),
        }
    }

    pub fn positivity(where_: &'static str, why: impl Into<String>) -> Self {
        Error::Positivity {
            where_,
            why: why.into(),
        }
    }

    pub fn admissibility(what: &'static str, why: impl Into<String>) -> Self {
        Error::Admissibility {
            what,
            why: why.into(),
        }
    }
}
