use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equilibration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { residual: f64, iterations: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("eigensolver failed after {iterations} iterations: {message}")]
    Solver { iterations: usize, message: String },

    #[error("degenerate eigenvalue at level {level} (gap {gap:.3e})")]
    Degenerate { level: usize, gap: f64 },

    #[error("observables `{first}` and `{second}` do not commute (commutator norm {norm:.3e})")]
    NonCommuting {
        first: String,
        second: String,
        norm: f64,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("eigenstate tracking failed between beta = {from} and beta = {to}: {reason}")]
    Tracking { from: f64, to: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected length {expected}, got {got}")))
    }
}
