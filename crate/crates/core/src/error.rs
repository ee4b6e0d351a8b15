use thiserror::Error;

/// Errors raised by the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid arguments or violated preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Legendre transform did not reach the gradient tolerance.
    #[error("Legendre transform did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Field sup-norm exceeded the blowup guard.
    #[error("blowup at step {step} (t = {t}): sup norm {sup_norm:e} exceeds guard {guard:e}")]
    Blowup {
        step: usize,
        t: f64,
        sup_norm: f64,
        guard: f64,
    },

    /// Fixed-point iteration did not settle before the time limit.
    #[error("no convergence by t = {t}: last change rate {rate:e} (tolerance {tol:e})")]
    Timeout { t: f64, rate: f64, tol: f64 },

    /// Two computed objects disagree with a structural inequality.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A tolerance-defined set came out empty.
    #[error("tolerance error: {0}")]
    Tolerance(String),

    /// Bisection bracket does not straddle the root.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// Trajectory left the finite range.
    #[error("trajectory blew up at t = {t}; last finite state x = {x:?}, u = {u}, p = {p:?}")]
    FlowBlowup { t: f64, x: [f64; 2], u: f64, p: [f64; 2] },
}

impl Error {
    /// True for errors caused by bad inputs rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
