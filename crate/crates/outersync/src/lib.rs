//! Out-synchronization of two trajectories of a switched recurrent network
//! under event-triggered data sampling.
//!
//! The crate is organised in the order a run flows through it:
//!
//! * [`model`] — the plant: modes, switching schedules, activations.
//! * [`analysis`] — weighted norms, contraction coefficients mu/nu, global
//!   bounds, and feasibility search for the norm weights xi.
//! * [`engine`] — exact event-driven integration of the sampled-data pair.
//! * [`triggers`] — the four trigger-rule families and threshold functions.
//! * [`diagnostics`] — post-hoc checks on traces (contraction, Zeno gaps,
//!   convergence rate, Gronwall envelope).
//! * [`presets`] — the shipped benchmark systems and threshold sets.

pub mod analysis;
pub mod diagnostics;
pub mod engine;
pub mod model;
pub mod presets;
pub mod triggers;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// A structural invariant of an input type is violated.
    #[error("validation error: {0}")]
    Validation(String),
    /// An integration step was asked to straddle a breakpoint or run backwards.
    #[error("integrator contract violation: {0}")]
    Contract(String),
    /// The state left the representable range.
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    /// A trigger rule failed its precondition check against the system bounds.
    #[error("rule validation failed: {0}")]
    RuleRejected(String),
    /// A diagnostic was handed a trace it cannot interpret.
    #[error("trace error: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
