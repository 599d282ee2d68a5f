//! Proximal point solver with a stabilized Sinkhorn inner loop.
//!
//! Each outer module linearizes the structural term at the current plan and
//! adds a KL proximal term, which turns the subproblem into an entropic
//! unbalanced OT problem with cost
//!
//! ```text
//! C(t) = -X - a0 Σ1 P(t) Σ2ᵀ - tau log P(t)
//! ```
//!
//! and entropic weight `a1' = a1 + tau`. The subproblem is solved in the dual
//! with log-domain scaling: `Y = -C/a1' + a 1ᵀ + 1 bᵀ` is the log of the
//! current plan, and both duals are updated from the same `Y` each step.
//!
//! The subproblem is posed on `Ω`; its minimizer is the normalized minimizer
//! of the unconstrained unbalanced problem, so every outer iterate is
//! renormalized to unit mass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::{logsumexp_all, logsumexp_cols, logsumexp_rows};
use crate::objective::{compute_covariances, structural_product};
use crate::params::{RotParams, Smoothness};
use crate::trace::SolverTrace;
use crate::types::{CovariancePair, SampleSet, TransportPlan};

/// Working state of the Sinkhorn solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    /// `log P(t)`, normalized to unit mass.
    pub log_plan: Matrix,
    pub dual_a: Vec<f64>,
    pub dual_b: Vec<f64>,
    /// `C(t)` of the last outer module.
    pub cost: Matrix,
    /// `Y` at the end of the last inner loop (unnormalized log-plan).
    pub log_scaled: Matrix,
}

/// Result of one inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    /// `Y(K)`, the unnormalized log-plan.
    pub log_plan: Matrix,
    pub dual_a: Vec<f64>,
    pub dual_b: Vec<f64>,
    /// Steps taken (at most `K`; fewer on early exit).
    pub iterations: usize,
}

pub(crate) fn param_snapshot(params: &RotParams) -> String {
    format!(
        "alpha=({:e}, {:e}, {:e}, {:e}) rho={:e} tau={:e} T={} K={} smoothness={}",
        params.alpha0,
        params.alpha1,
        params.alpha2,
        params.alpha3,
        params.rho,
        params.tau(),
        params.outer_iters,
        params.inner_iters,
        params.smoothness.name()
    )
}

fn failure(stage: &'static str, iteration: usize, what: &str, params: &RotParams) -> Error {
    Error::NumericalFailure {
        stage,
        iteration,
        context: format!("{what}; {}", param_snapshot(params)),
    }
}

/// `C(t) = -X - a0 Σ1 P(t) Σ2ᵀ - tau log P(t)` with `P(t) = exp(log_plan_prev)`.
/// `cov` is only consulted when `alpha0 > 0`.
pub fn proximal_cost(
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    log_plan_prev: &Matrix,
    params: &RotParams,
) -> Result<Matrix> {
    let data = x.data();
    if data.shape() != log_plan_prev.shape() {
        return Err(Error::shape(
            format!("{}x{}", data.rows(), data.cols()),
            format!("{}x{}", log_plan_prev.rows(), log_plan_prev.cols()),
        ));
    }
    let mut cost = data.scale(-1.0);
    if params.alpha0 > 0.0 {
        let cov = cov.ok_or_else(|| Error::invalid("structural term needs similarity matrices"))?;
        let structural = structural_product(cov, &log_plan_prev.exp(), false)?;
        for (c, s) in cost.as_mut_slice().iter_mut().zip(structural.as_slice()) {
            *c -= params.alpha0 * s;
        }
    }
    let tau = params.tau();
    if tau > 0.0 {
        for (c, lp) in cost.as_mut_slice().iter_mut().zip(log_plan_prev.as_slice()) {
            *c -= tau * lp;
        }
    }
    if !cost.is_finite() {
        return Err(failure("proximal_cost", 0, "non-finite cost", params));
    }
    Ok(cost)
}

/// Runs up to `K` stabilized Sinkhorn steps on the subproblem with the given
/// cost, starting from zero duals.
pub fn sinkhorn_inner(cost: &Matrix, params: &RotParams) -> Result<InnerSolution> {
    let (d, n) = cost.shape();
    if params.p0.len() != d || params.q0.len() != n {
        return Err(Error::shape(
            format!("priors of length {d} and {n}"),
            format!("{} and {}", params.p0.len(), params.q0.len()),
        ));
    }
    let eps = params.entropic_weight();
    if !(eps >= RotParams::MIN_ENTROPIC_WEIGHT) {
        return Err(Error::invalid(format!(
            "alpha1 + tau = {eps:e} is below {:e}; the Sinkhorn dual is undefined",
            RotParams::MIN_ENTROPIC_WEIGHT
        )));
    }
    if !cost.is_finite() {
        return Err(failure("sinkhorn_inner", 0, "non-finite cost", params));
    }

    let row_factor = params.alpha2 / (eps + params.alpha2);
    let col_factor = params.alpha3 / (eps + params.alpha3);
    let log_p0: Vec<f64> = params.p0.iter().map(|&v| libm::log(v)).collect();
    let log_q0: Vec<f64> = params.q0.iter().map(|&v| libm::log(v)).collect();

    let base = cost.scale(-1.0 / eps);
    let mut y = base.clone();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; n];
    let mut iterations = 0;

    for k in 0..params.inner_iters {
        let log_p = logsumexp_rows(&y)?;
        let log_q = logsumexp_cols(&y)?;
        let mut change = 0.0f64;
        for i in 0..d {
            let next = row_factor * (a[i] + log_p0[i] - log_p[i]);
            change = change.max((next - a[i]).abs());
            a[i] = next;
        }
        for j in 0..n {
            let next = col_factor * (b[j] + log_q0[j] - log_q[j]);
            change = change.max((next - b[j]).abs());
            b[j] = next;
        }
        if !change.is_finite() {
            return Err(failure(
                "sinkhorn_inner",
                k,
                "non-finite dual variables",
                params,
            ));
        }
        for (i, ai) in a.iter().enumerate() {
            let (src, dst) = (base.row(i), y.row_mut(i));
            for ((out, s), bj) in dst.iter_mut().zip(src).zip(&b) {
                *out = s + ai + bj;
            }
        }
        iterations = k + 1;
        if params.inner_tol > 0.0 && change < params.inner_tol {
            break;
        }
    }
    if !y.is_finite() {
        return Err(failure("sinkhorn_inner", iterations, "non-finite log-plan", params));
    }
    Ok(InnerSolution {
        log_plan: y,
        dual_a: a,
        dual_b: b,
        iterations,
    })
}

/// Steppable Sinkhorn solver: one [`SinkhornSolver::step`] is one outer module.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    x: SampleSet,
    cov: Option<CovariancePair>,
    params: RotParams,
    state: SinkhornState,
    trace: SolverTrace,
}

impl SinkhornSolver {
    pub fn new(x: &SampleSet, params: &RotParams) -> Result<Self> {
        Self::with_similarities(x, params, None)
    }

    /// Uses the supplied similarity matrices instead of covariances.
    pub fn with_similarities(
        x: &SampleSet,
        params: &RotParams,
        cov: Option<CovariancePair>,
    ) -> Result<Self> {
        let (d, n) = (x.features(), x.samples());
        params.validate(d, n)?;
        if params.smoothness != Smoothness::Entropic {
            return Err(Error::invalid(
                "the Sinkhorn solver requires entropic smoothness",
            ));
        }
        if params.entropic_weight() < RotParams::MIN_ENTROPIC_WEIGHT {
            return Err(Error::invalid(format!(
                "alpha1 + tau = {:e} is below {:e}",
                params.entropic_weight(),
                RotParams::MIN_ENTROPIC_WEIGHT
            )));
        }
        let mut trace = SolverTrace::default();
        if params.alpha0 > 0.0 {
            let note = format!(
                "warning: structural weight alpha0={:e} with the Sinkhorn solver may be numerically unstable",
                params.alpha0
            );
            log::warn!("{note}");
            trace.notes.push(note);
        }
        let cov = match cov {
            Some(c) => {
                c.check_dims(d, n)?;
                Some(c)
            }
            None if params.alpha0 > 0.0 => Some(compute_covariances(x)),
            None => None,
        };
        let log_plan = Matrix::outer_sum(
            &params.p0.iter().map(|&v| libm::log(v)).collect::<Vec<_>>(),
            &params.q0.iter().map(|&v| libm::log(v)).collect::<Vec<_>>(),
        );
        let state = SinkhornState {
            log_scaled: log_plan.clone(),
            log_plan,
            dual_a: vec![0.0; d],
            dual_b: vec![0.0; n],
            cost: Matrix::zeros(d, n),
        };
        Ok(SinkhornSolver {
            x: x.clone(),
            cov,
            params: params.clone(),
            state,
            trace,
        })
    }

    /// Outer modules a full solve runs: `T`, or one when the cost does not
    /// depend on the previous plan (`alpha0 = 0` and `tau = 0`).
    pub fn outer_modules(&self) -> usize {
        if self.is_single_pass() {
            1
        } else {
            self.params.outer_iters
        }
    }

    pub fn is_single_pass(&self) -> bool {
        self.params.alpha0 == 0.0 && self.params.tau() == 0.0
    }

    pub fn state(&self) -> &SinkhornState {
        &self.state
    }

    pub fn trace(&self) -> &SolverTrace {
        &self.trace
    }

    /// Runs one outer module and returns `<-X, P(t+1)>`.
    pub fn step(&mut self) -> Result<f64> {
        let t = self.trace.iterations_used;
        let cost = proximal_cost(&self.x, self.cov.as_ref(), &self.state.log_plan, &self.params)
            .map_err(|e| with_iteration(e, t))?;
        let inner = sinkhorn_inner(&cost, &self.params).map_err(|e| with_iteration(e, t))?;
        let lse = logsumexp_all(&inner.log_plan);
        if !lse.is_finite() {
            return Err(failure("solve_sinkhorn", t, "plan mass overflow", &self.params));
        }
        let log_plan = inner.log_plan.map(|v| v - lse);
        let objective = -self.x.data().dot(&log_plan.exp())?;

        self.state.log_plan = log_plan;
        self.state.log_scaled = inner.log_plan;
        self.state.dual_a = inner.dual_a;
        self.state.dual_b = inner.dual_b;
        self.state.cost = cost;
        self.trace.objective.push(objective);
        self.trace.inner_iterations.push(inner.iterations);
        self.trace.iterations_used += 1;
        Ok(objective)
    }

    /// Current plan in `Ω`; its raw mass is that of the last inner solution.
    pub fn plan(&self) -> Result<TransportPlan> {
        TransportPlan::from_log(self.state.log_scaled.clone())
    }

    /// Runs the remaining outer modules and returns the plan and trace.
    pub fn finish(mut self) -> Result<(TransportPlan, SolverTrace)> {
        while self.trace.iterations_used < self.outer_modules() {
            self.step()?;
        }
        let plan = self.plan()?;
        Ok((plan, self.trace))
    }
}

fn with_iteration(err: Error, t: usize) -> Error {
    match err {
        Error::NumericalFailure { stage, iteration, context } => Error::NumericalFailure {
            stage,
            iteration: t,
            context: format!("inner step {iteration}; {context}"),
        },
        other => other,
    }
}

/// Solves the ROT problem with the proximal Sinkhorn scheme.
pub fn solve_sinkhorn(x: &SampleSet, params: &RotParams) -> Result<(TransportPlan, SolverTrace)> {
    SinkhornSolver::new(x, params)?.finish()
}
