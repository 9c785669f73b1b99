//! Error taxonomy shared by the whole crate.
//!
//! Variants are grouped by how callers (and the CLI exit-code mapping) treat
//! them: configuration/shape problems, violated physical pre-conditions,
//! singular parameter configurations, and numerical/convergence failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A requested space or dense matrix would exceed the capacity guard.
    #[error("capacity exceeded: {what} dimension {dim} is above the limit {limit}")]
    Capacity {
        what: &'static str,
        dim: usize,
        limit: usize,
    },

    /// An index (mode, qubit, level, ...) is outside the valid range.
    #[error("index out of range: {what} index {index} not below {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Dimensions of inputs do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A physical pre-condition does not hold (names the violated constraint).
    #[error("condition violated: {0}")]
    Condition(String),

    /// Parameters hit a removable singularity (for example a zero denominator
    /// in a closed-form amplitude).
    #[error("singular configuration: {0}")]
    Singular(String),

    /// A numerical invariant failed (residual, orthogonality, positivity...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The adaptive integrator could not take an acceptable step.
    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    /// Cutoff auto-escalation stopped before the convergence gate passed.
    #[error("not converged: {0}")]
    Unconverged(String),

    /// A named standard trajectory does not exist.
    #[error("unknown trajectory name: {0}")]
    UnknownTrajectory(String),

    /// A search finished without finding a feasible point.
    #[error("not found: {0}")]
    NotFound(String),
}

pub type Result<T> = std::result::Result<T, Error>;
