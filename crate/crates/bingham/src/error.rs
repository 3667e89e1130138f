//! Library-wide error type.

use thiserror::Error;

/// Errors produced by solvers, serialization, and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside a function's documented domain.
    #[error("domain error in {what}: {detail}")]
    Domain {
        /// Operation that rejected its input.
        what: &'static str,
        /// Human-readable description of the violation.
        detail: String,
    },

    /// An iterative solver exhausted its budget without meeting tolerance.
    #[error("{what}: no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        /// Solver that failed.
        what: &'static str,
        /// Iterations performed.
        iterations: usize,
        /// Final residual norm.
        residual: f64,
    },

    /// Input for which the requested operation is singular.
    #[error("singular input in {what}: {detail}")]
    Singular {
        /// Operation that cannot proceed.
        what: &'static str,
        /// Description of the singular configuration.
        detail: String,
    },

    /// A state or configuration violates a feasibility requirement.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Numerical breakdown during a run (NaN fields, feasibility loss, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed file contents or configuration text.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches the offending path to a filesystem error so diagnostics name
    /// the file, not just the OS condition.
    pub(crate) fn io_at(path: &std::path::Path, e: std::io::Error) -> Error {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }

    /// True for failures of numerics (as opposed to bad usage or bad files);
    /// the CLI maps these to its "numerical failure" exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Singular { .. }
                | Error::Infeasible(_)
                | Error::Numerical(_)
        )
    }
}
