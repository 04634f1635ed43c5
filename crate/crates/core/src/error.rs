use thiserror::Error;

/// Errors raised by the model, evaluators, solvers and simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("threshold vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    /// The delay target lies below the smallest delay any policy can reach.
    #[error(
        "infeasible delay bound {d_max}: the minimum achievable expected delay is {min_delay} slots"
    )]
    Infeasible { d_max: f64, min_delay: f64 },

    #[error("success probability is zero, expected delay is infinite")]
    InfiniteDelay,

    #[error("root not bracketed on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
