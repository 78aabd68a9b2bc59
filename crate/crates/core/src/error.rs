use thiserror::Error;

/// Errors raised by model evaluation, fitting and the Monte Carlo engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter outside model domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("log-likelihood is not finite at observation row {row}")]
    NonFiniteLogLik { row: usize },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("maximizer of the adjusted profile lies on the search bracket boundary at {0}")]
    BracketBoundary(f64),

    #[error("replicate {index} (seed {seed:#018x}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("conditional grid still carries {mass:e} probability at its boundary after widening")]
    GridBoundary { mass: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Domain(_) | Error::Invalid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
