use thiserror::Error;

use crate::analytic::SteadyState;

/// Errors produced by the model, optimizer and simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// The scenario document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A configuration value violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// The fixed-point iteration hit its budget. Carries the best iterate.
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<SteadyState>,
    },

    /// An intermediate quantity became NaN or infinite.
    #[error("non-finite value in {quantity}")]
    NonFinite { quantity: &'static str },

    /// An iterate broke a structural identity (e.g. S_DL > 1).
    #[error("consistency violation: {0}")]
    Consistency(String),

    /// No confirmed packet can succeed, so delays have no meaning.
    #[error("delay undefined: no confirmed packet can succeed")]
    UndefinedDelay,

    /// Fairness needs at least one strictly positive entry.
    #[error("fairness undefined for an all-zero vector")]
    ZeroFairness,

    /// An in-simulation audit failed.
    #[error("simulation assertion failed: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
