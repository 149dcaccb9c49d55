use thiserror::Error;

/// Errors surfaced by the estimation, variance, and bootstrap layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A moment evaluator produced a non-finite value.
    #[error("non-finite {what} at observation {index}")]
    Evaluation { what: &'static str, index: usize },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A weight matrix could not be realized because the matrix to invert is
    /// singular or numerically rank deficient.
    #[error("singular weight matrix in {context} (condition estimate {cond:.3e})")]
    SingularWeight { context: &'static str, cond: f64 },

    /// A symmetric matrix inversion failed outside weight realization.
    #[error("singular matrix in {context} (condition estimate {cond:.3e})")]
    Singular { context: &'static str, cond: f64 },

    /// The minimizer exhausted every start without meeting the gradient
    /// tolerance. Carries the best candidate parameter and its criterion.
    #[error("no start converged (best criterion {best_criterion:.6e} at {best_theta:?})")]
    NonConvergence {
        best_theta: Vec<f64>,
        best_criterion: f64,
    },

    /// A cross-module contract was violated (e.g. a step-2 variance requested
    /// without a first-step fit).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Too many bootstrap draws failed to produce a statistic.
    #[error("bootstrap degenerate: {failures}/{total} draws failed")]
    BootstrapDegenerate { failures: usize, total: usize },

    /// A quantile was requested from a degenerate or empty distribution.
    #[error("bootstrap quantile unavailable: {0}")]
    QuantileUnavailable(String),

    /// A variance entry required to be positive was not.
    #[error("variance invalid: {0}")]
    VarianceInvalid(String),

    /// Dataset input could not be read or parsed.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A pseudo-true closed form failed its large-sample oracle check.
    #[error("pseudo-true value failed its oracle check: {0}")]
    PseudoTrueUnverified(String),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
