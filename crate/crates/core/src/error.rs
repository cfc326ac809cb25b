//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A zone has no outgoing on-demand flow, so its row of the driver
    /// movement chain is undefined.
    #[error("zone {zone} has no on-demand outflow; its movement probabilities are undefined")]
    DegenerateZone { zone: usize },

    /// The idle-driver count handed to the square-root matching law is not positive.
    #[error("idle supply {value} in zone {zone} must be positive")]
    DegenerateSupply { zone: usize, value: f64 },

    /// The number of drivers required by the equilibrium is outside `(0, N0)`.
    #[error("required drivers {required} outside the attainable range (0, {pool})")]
    InfeasibleSupply { required: f64, pool: f64 },

    /// The existence condition for the effective idle supply fails in a zone.
    #[error("effective idle supply has no solution in zone {zone} (margin {margin})")]
    InfeasibleRegion { zone: usize, margin: f64 },

    /// A transition row has pick-up plus drop-off probability above one.
    #[error("state {state}: pick-up + drop-off probability {total} exceeds 1")]
    InvalidRates { state: usize, total: f64 },

    /// A linear system of a Markov chain is singular within tolerance.
    #[error("{context}: linear system is singular (min pivot {pivot:e})")]
    SingularChain { context: String, pivot: f64 },

    /// A fixed-point or root-finding routine did not reach its tolerance.
    #[error("{what} did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { what: &'static str, residual: f64, iterations: usize },

    /// Every start point of an optimization evaluated as infeasible.
    #[error("no feasible start point: {0}")]
    NoFeasibleStart(String),

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error describes an infeasible market rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleSupply { .. }
                | Error::InfeasibleRegion { .. }
                | Error::NoFeasibleStart(_)
                | Error::DegenerateZone { .. }
                | Error::DegenerateSupply { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
