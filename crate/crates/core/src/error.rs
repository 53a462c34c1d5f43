use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("ill-conditioned block decomposition (condition number {condition:.3e})")]
    IllConditionedDecomposition { condition: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("overapproximation tightness not achieved after {iterations} refinements (varpi = {varpi:.6e}, threshold = {threshold:.6e})")]
    TightnessNotAchieved {
        varpi: f64,
        threshold: f64,
        iterations: usize,
    },

    #[error("LMI assembly error: {0}")]
    Assembly(String),

    #[error("invalid solver input: {0}")]
    SolverInput(String),

    #[error("infeasible at the upper end of the bisection bracket (value {upper})")]
    InfeasibleAtBracket { upper: f64 },

    #[error("certificate rejected: {0}")]
    CertificateInvalid(String),

    #[error("horizon too short: estimated tail fraction {tail_fraction:.3e} exceeds 1%")]
    HorizonTooShort { tail_fraction: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
