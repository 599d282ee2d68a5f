use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

/// Per-outer-iteration record of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    /// `<-X, P(t)>` with `P(t)` normalized into `Ω`, one entry per outer step.
    pub objective: Vec<f64>,
    /// `‖P(t) - S(t)‖₁`, ADMM solver only.
    pub primal_residual: Vec<f64>,
    /// Sinkhorn steps actually taken in each outer step (Sinkhorn solver only).
    pub inner_iterations: Vec<usize>,
    pub iterations_used: usize,
    /// Filled in by callers that time the solve; the core never reads a clock.
    pub wall_time: Option<Duration>,
    /// Structured warnings raised during the solve.
    pub notes: Vec<String>,
}

impl SolverTrace {
    /// Relative change of the objective between the last two outer steps.
    pub fn last_relative_change(&self) -> Option<f64> {
        match self.objective.as_slice() {
            [.., prev, last] => Some(relative_change(*prev, *last)),
            _ => None,
        }
    }
}

/// `|cur - prev| / |cur|`, with the absolute change used when `cur` is zero.
pub fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if cur != 0.0 {
        diff / cur.abs()
    } else {
        diff
    }
}
