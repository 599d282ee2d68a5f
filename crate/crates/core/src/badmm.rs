//! Bregman ADMM solver.
//!
//! The ROT problem is split with an auxiliary plan `S` and auxiliary marginals
//! `mu`, `eta` under the constraints `P = S`, `P 1 = mu`, `Sᵀ 1 = eta`, each
//! enforced with a linear dual term plus a KL Bregman term of weight `rho`.
//! Every block has a closed-form minimizer that is a scaled row or column
//! softmax, so all primal variables are carried in the log domain.
//!
//! One iteration updates `P`, `S`, `mu`, `eta` and the duals in that order.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::{logsumexp, logsumexp_cols, logsumexp_rows, max_abs_diff};
use crate::objective::{compute_covariances, structural_product};
use crate::params::{RotParams, Smoothness};
use crate::sinkhorn::param_snapshot;
use crate::trace::SolverTrace;
use crate::types::{CovariancePair, SampleSet, TransportPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct BadmmState {
    pub log_p: Matrix,
    /// Auxiliary plan `S`.
    pub log_s: Matrix,
    pub log_mu: Vec<f64>,
    pub log_eta: Vec<f64>,
    /// Dual of `P = S`.
    pub dual_z: Matrix,
    /// Dual of `P 1 = mu`.
    pub dual_z1: Vec<f64>,
    /// Dual of `Sᵀ 1 = eta`.
    pub dual_z2: Vec<f64>,
}

impl BadmmState {
    /// `P = S = p0 q0ᵀ`, `mu = p0`, `eta = q0`, zero duals.
    pub fn initial(params: &RotParams) -> Self {
        let log_p0: Vec<f64> = params.p0.iter().map(|&v| libm::log(v)).collect();
        let log_q0: Vec<f64> = params.q0.iter().map(|&v| libm::log(v)).collect();
        let (d, n) = (log_p0.len(), log_q0.len());
        let log_p = Matrix::outer_sum(&log_p0, &log_q0);
        BadmmState {
            log_s: log_p.clone(),
            log_p,
            log_mu: log_p0,
            log_eta: log_q0,
            dual_z: Matrix::zeros(d, n),
            dual_z1: alloc::vec![0.0; d],
            dual_z2: alloc::vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_p.is_finite()
            && self.log_s.is_finite()
            && self.dual_z.is_finite()
            && [&self.log_mu, &self.log_eta, &self.dual_z1, &self.dual_z2]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn failure(stage: &'static str, what: &str, params: &RotParams) -> Error {
    Error::NumericalFailure {
        stage,
        iteration: 0,
        context: format!("{what}; {}", param_snapshot(params)),
    }
}

fn structural(
    cov: Option<&CovariancePair>,
    plan: &Matrix,
    transposed: bool,
    params: &RotParams,
) -> Result<Option<Matrix>> {
    if params.alpha0 > 0.0 {
        let cov = cov.ok_or_else(|| Error::invalid("structural term needs similarity matrices"))?;
        Ok(Some(structural_product(cov, plan, transposed)?))
    } else {
        Ok(None)
    }
}

/// Closed-form `P` update: a row softmax of `Y` scaled by the current `mu`.
pub fn update_p(
    state: &BadmmState,
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    params: &RotParams,
) -> Result<Matrix> {
    let s = needs_plan(params).then(|| state.log_s.exp());
    p_step(state, x, cov, params, s.as_ref())
}

/// Whether an update reads the other plan itself, not just its logarithm.
fn needs_plan(params: &RotParams) -> bool {
    params.alpha0 > 0.0 || params.smoothness == Smoothness::Quadratic
}

/// `update_p` with `exp(log S)` supplied by the caller when [`needs_plan`].
fn p_step(
    state: &BadmmState,
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    params: &RotParams,
    s: Option<&Matrix>,
) -> Result<Matrix> {
    let data = x.data();
    let rho = params.rho;
    let gw = match s {
        Some(s) => structural(cov, s, false, params)?,
        None => None,
    };

    let mut y = Matrix::zeros(data.rows(), data.cols());
    for (idx, out) in y.as_mut_slice().iter_mut().enumerate() {
        let mut numer = data.as_slice()[idx] - state.dual_z.as_slice()[idx]
            + rho * state.log_s.as_slice()[idx];
        if let Some(g) = &gw {
            numer += params.alpha0 * g.as_slice()[idx];
        }
        if params.smoothness == Smoothness::Quadratic {
            numer -= params.alpha1 * s.expect("supplied for the quadratic branch").as_slice()[idx];
        }
        *out = numer / rho;
    }
    if !y.is_finite() {
        return Err(failure("update_p", "non-finite Y", params));
    }
    let lse = logsumexp_rows(&y)?;
    for (r, (mu, l)) in state.log_mu.iter().zip(&lse).enumerate() {
        let shift = mu - l;
        for v in y.row_mut(r) {
            *v += shift;
        }
    }
    Ok(y)
}

/// Closed-form `S` update: a column softmax of `Y` scaled by the current `eta`.
/// Expects `state.log_p` to hold the freshly updated `P`.
pub fn update_s(
    state: &BadmmState,
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    params: &RotParams,
) -> Result<Matrix> {
    let p = needs_plan(params).then(|| state.log_p.exp());
    s_step(state, x, cov, params, p.as_ref())
}

/// `update_s` with `exp(log P)` supplied by the caller when [`needs_plan`].
fn s_step(
    state: &BadmmState,
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    params: &RotParams,
    p: Option<&Matrix>,
) -> Result<Matrix> {
    let (d, n) = x.data().shape();
    let rho = params.rho;
    let gw = match p {
        Some(p) => structural(cov, p, true, params)?,
        None => None,
    };
    let denom = match params.smoothness {
        Smoothness::Entropic => params.alpha1 + rho,
        Smoothness::Quadratic => rho,
    };

    let mut y = Matrix::zeros(d, n);
    for (idx, out) in y.as_mut_slice().iter_mut().enumerate() {
        let mut numer = state.dual_z.as_slice()[idx] + rho * state.log_p.as_slice()[idx];
        if let Some(g) = &gw {
            numer += params.alpha0 * g.as_slice()[idx];
        }
        if params.smoothness == Smoothness::Quadratic {
            numer -= params.alpha1 * p.expect("supplied for the quadratic branch").as_slice()[idx];
        }
        *out = numer / denom;
    }
    if !y.is_finite() {
        return Err(failure("update_s", "non-finite Y", params));
    }
    let lse = logsumexp_cols(&y)?;
    for r in 0..d {
        for (c, v) in y.row_mut(r).iter_mut().enumerate() {
            *v += state.log_eta[c] - lse[c];
        }
    }
    Ok(y)
}

fn marginal_update(log_current: &[f64], prior: &[f64], dual: &[f64], weight: f64, rho: f64) -> Vec<f64> {
    let y: Vec<f64> = log_current
        .iter()
        .zip(prior)
        .zip(dual)
        .map(|((&lm, &p), &z)| {
            let prior_term = if weight > 0.0 { weight * libm::log(p) } else { 0.0 };
            (rho * lm + prior_term - z) / (rho + weight)
        })
        .collect();
    let lse = logsumexp(&y);
    y.into_iter().map(|v| v - lse).collect()
}

/// Log-domain update of the row marginal `mu`.
pub fn update_mu(state: &BadmmState, params: &RotParams) -> Result<Vec<f64>> {
    let out = marginal_update(&state.log_mu, &params.p0, &state.dual_z1, params.alpha2, params.rho);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(failure("update_mu", "non-finite log mu", params));
    }
    Ok(out)
}

/// Log-domain update of the column marginal `eta`.
pub fn update_eta(state: &BadmmState, params: &RotParams) -> Result<Vec<f64>> {
    let out = marginal_update(&state.log_eta, &params.q0, &state.dual_z2, params.alpha3, params.rho);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(failure("update_eta", "non-finite log eta", params));
    }
    Ok(out)
}

/// Dual ascent: `Z += rho (P - S)`, `z1 += rho (mu - P 1)`, `z2 += rho (eta - Sᵀ 1)`.
pub fn update_duals(state: &BadmmState, params: &RotParams) -> (Matrix, Vec<f64>, Vec<f64>) {
    duals_step(state, params, &state.log_p.exp(), &state.log_s.exp())
}

fn duals_step(state: &BadmmState, params: &RotParams, p: &Matrix, s: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let rho = params.rho;
    let mut z = state.dual_z.clone();
    for ((zv, pv), sv) in z.as_mut_slice().iter_mut().zip(p.as_slice()).zip(s.as_slice()) {
        *zv += rho * (pv - sv);
    }
    let z1 = state
        .dual_z1
        .iter()
        .zip(&state.log_mu)
        .zip(p.row_sums())
        .map(|((z, lm), r)| z + rho * (libm::exp(*lm) - r))
        .collect();
    let z2 = state
        .dual_z2
        .iter()
        .zip(&state.log_eta)
        .zip(s.col_sums())
        .map(|((z, le), c)| z + rho * (libm::exp(*le) - c))
        .collect();
    (z, z1, z2)
}

/// Diagnostics of one ADMM iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadmmStep {
    /// `<-X, P(t+1)>` with `P` normalized into `Ω`.
    pub objective: f64,
    /// `‖P(t+1) - S(t+1)‖₁`.
    pub primal_residual: f64,
    /// `max |P(t+1) 1 - mu(t)|`, measured right after the `P` update.
    pub row_marginal_gap: f64,
    /// `max |S(t+1)ᵀ 1 - eta(t)|`, measured right after the `S` update.
    pub col_marginal_gap: f64,
    /// Largest absolute change of any dual entry.
    pub dual_change: f64,
}

/// Steppable Bregman ADMM solver.
#[derive(Debug, Clone)]
pub struct BadmmSolver {
    x: SampleSet,
    cov: Option<CovariancePair>,
    params: RotParams,
    state: BadmmState,
    /// `exp(log S)` of the current state.
    s: Matrix,
    trace: SolverTrace,
}

impl BadmmSolver {
    pub fn new(x: &SampleSet, params: &RotParams) -> Result<Self> {
        Self::with_similarities(x, params, None)
    }

    pub fn with_similarities(
        x: &SampleSet,
        params: &RotParams,
        cov: Option<CovariancePair>,
    ) -> Result<Self> {
        let (d, n) = (x.features(), x.samples());
        params.validate(d, n)?;
        let cov = match cov {
            Some(c) => {
                c.check_dims(d, n)?;
                Some(c)
            }
            None if params.alpha0 > 0.0 => Some(compute_covariances(x)),
            None => None,
        };
        let mut trace = SolverTrace::default();
        if params.smoothness == Smoothness::Quadratic {
            trace.notes.push(
                "quadratic smoothness: iterations use R(S,P) = <S,P>; objectives report ||P||_F^2"
                    .into(),
            );
        }
        let state = BadmmState::initial(params);
        Ok(BadmmSolver {
            x: x.clone(),
            cov,
            params: params.clone(),
            s: state.log_s.exp(),
            state,
            trace,
        })
    }

    pub fn state(&self) -> &BadmmState {
        &self.state
    }

    pub fn trace(&self) -> &SolverTrace {
        &self.trace
    }

    /// One full iteration: `P`, `S`, `mu`, `eta`, then duals.
    pub fn step(&mut self) -> Result<BadmmStep> {
        let t = self.trace.iterations_used;
        self.step_inner().map_err(|e| match e {
            Error::NumericalFailure { stage, context, .. } => Error::NumericalFailure {
                stage,
                iteration: t,
                context,
            },
            other => other,
        })
    }

    fn step_inner(&mut self) -> Result<BadmmStep> {
        let cov = self.cov.as_ref();
        let needs = needs_plan(&self.params);
        let mu_prev: Vec<f64> = self.state.log_mu.iter().map(|&v| libm::exp(v)).collect();
        let eta_prev: Vec<f64> = self.state.log_eta.iter().map(|&v| libm::exp(v)).collect();

        self.state.log_p = p_step(&self.state, &self.x, cov, &self.params, needs.then_some(&self.s))?;
        let p = self.state.log_p.exp();
        let row_marginal_gap = max_abs_diff(&p.row_sums(), &mu_prev);

        self.state.log_s = s_step(&self.state, &self.x, cov, &self.params, needs.then_some(&p))?;
        self.s = self.state.log_s.exp();
        let col_marginal_gap = max_abs_diff(&self.s.col_sums(), &eta_prev);

        self.state.log_mu = update_mu(&self.state, &self.params)?;
        self.state.log_eta = update_eta(&self.state, &self.params)?;

        let (z, z1, z2) = duals_step(&self.state, &self.params, &p, &self.s);
        let dual_change = z
            .max_abs_diff(&self.state.dual_z)?
            .max(max_abs_diff(&z1, &self.state.dual_z1))
            .max(max_abs_diff(&z2, &self.state.dual_z2));
        self.state.dual_z = z;
        self.state.dual_z1 = z1;
        self.state.dual_z2 = z2;
        if !self.state.is_finite() {
            return Err(failure("update_duals", "non-finite state", &self.params));
        }

        let primal_residual = p.zip_map(&self.s, |a, b| (a - b).abs())?.sum();
        // P 1 = mu(t) sums to one up to rounding
        let objective = -self.x.data().dot(&p)? / p.sum();

        self.trace.objective.push(objective);
        self.trace.primal_residual.push(primal_residual);
        self.trace.iterations_used += 1;
        Ok(BadmmStep {
            objective,
            primal_residual,
            row_marginal_gap,
            col_marginal_gap,
            dual_change,
        })
    }

    /// Current `P` normalized into `Ω`.
    pub fn plan(&self) -> Result<TransportPlan> {
        TransportPlan::from_log(self.state.log_p.clone())
    }

    /// Runs the remaining iterations up to `T`.
    pub fn finish(mut self) -> Result<(TransportPlan, SolverTrace)> {
        while self.trace.iterations_used < self.params.outer_iters {
            self.step()?;
        }
        let plan = self.plan()?;
        Ok((plan, self.trace))
    }
}

/// Solves the ROT problem with Bregman ADMM.
pub fn solve_badmm(x: &SampleSet, params: &RotParams) -> Result<(TransportPlan, SolverTrace)> {
    BadmmSolver::new(x, params)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn random_state(seed: u64, d: usize, n: usize) -> BadmmState {
        // small LCG keeps the test free of extra dependencies
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let log_s = Matrix::from_fn(d, n, |_, _| next() - 2.0);
        let log_mu: Vec<f64> = crate::numeric::log_softmax(&(0..d).map(|_| next()).collect::<Vec<_>>());
        let log_eta: Vec<f64> = crate::numeric::log_softmax(&(0..n).map(|_| next()).collect::<Vec<_>>());
        BadmmState {
            log_p: Matrix::from_fn(d, n, |_, _| next() - 2.0),
            log_s,
            log_mu,
            log_eta,
            dual_z: Matrix::from_fn(d, n, |_, _| next()),
            dual_z1: (0..d).map(|_| next()).collect(),
            dual_z2: (0..n).map(|_| next()).collect(),
        }
    }

    fn row_softmax(y: &Matrix) -> Matrix {
        let mut out = y.clone();
        for r in 0..y.rows() {
            let m = y.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = y.row(r).iter().map(|v| libm::exp(v - m)).collect();
            let s: f64 = e.iter().sum();
            for (o, v) in out.row_mut(r).iter_mut().zip(e) {
                *o = v / s;
            }
        }
        out
    }

    #[test]
    fn p_update_row_sums_equal_mu() {
        for seed in 0..20 {
            let state = random_state(seed, 3, 5);
            let x = SampleSet::new(Matrix::from_fn(3, 5, |r, c| (r + 2 * c) as f64 * 0.3)).unwrap();
            for smooth in [Smoothness::Entropic, Smoothness::Quadratic] {
                let params = RotParams::uniform(3, 5)
                    .with_alphas(0.0, 0.7, 1.0, 1.0)
                    .with_rho(1.3)
                    .with_smoothness(smooth);
                let log_p = update_p(&state, &x, None, &params).unwrap();
                let rows = log_p.exp().row_sums();
                for (r, lm) in rows.iter().zip(&state.log_mu) {
                    assert!((r - libm::exp(*lm)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn p_update_with_zero_data_and_duals_rescales_s() {
        let mut state = random_state(7, 2, 3);
        state.dual_z = Matrix::zeros(2, 3);
        let x = SampleSet::new(Matrix::zeros(2, 3)).unwrap();
        let params = RotParams::uniform(2, 3).with_alphas(0.0, 2.0, 1.0, 1.0).with_rho(0.8);
        let p = update_p(&state, &x, None, &params).unwrap().exp();
        let s_rows = row_softmax(&state.log_s);
        for r in 0..2 {
            let mu = libm::exp(state.log_mu[r]);
            for c in 0..3 {
                assert!((p[(r, c)] - mu * s_rows[(r, c)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn p_update_matches_softmax_projection_form() {
        // diag(mu) σ_row((X + a0 Σ1 S Σ2ᵀ - Z)/rho + log S), evaluated directly
        let state = random_state(11, 2, 2);
        let x = SampleSet::from_rows(&[[0.3, 1.2], [2.0, 0.1]]).unwrap();
        let cov = compute_covariances(&x);
        let params = RotParams::uniform(2, 2).with_alphas(0.2, 0.5, 1.0, 1.0).with_rho(0.7);
        let got = update_p(&state, &x, Some(&cov), &params).unwrap().exp();

        let s = state.log_s.exp();
        let (s1, s2) = (cov.sigma1(), cov.sigma2());
        let mut y = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut g = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        g += s1[(i, k)] * s[(k, l)] * s2[(j, l)];
                    }
                }
                y[(i, j)] = (x.data()[(i, j)] + 0.2 * g - state.dual_z[(i, j)]) / 0.7
                    + state.log_s[(i, j)];
            }
        }
        let sm = row_softmax(&y);
        for i in 0..2 {
            for j in 0..2 {
                let want = libm::exp(state.log_mu[i]) * sm[(i, j)];
                assert!((got[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn s_update_column_sums_equal_eta() {
        for seed in 0..20 {
            let state = random_state(100 + seed, 4, 3);
            let x = SampleSet::new(Matrix::filled(4, 3, 1.0)).unwrap();
            for smooth in [Smoothness::Entropic, Smoothness::Quadratic] {
                let params = RotParams::uniform(4, 3)
                    .with_alphas(0.0, 0.4, 1.0, 1.0)
                    .with_smoothness(smooth);
                let cols = update_s(&state, &x, None, &params).unwrap().exp().col_sums();
                for (c, le) in cols.iter().zip(&state.log_eta) {
                    assert!((c - libm::exp(*le)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn s_update_without_regularizers_column_normalizes_p() {
        let mut state = random_state(3, 3, 2);
        state.dual_z = Matrix::zeros(3, 2);
        let x = SampleSet::new(Matrix::zeros(3, 2)).unwrap();
        let params = RotParams::uniform(3, 2).with_alphas(0.0, 0.0, 1.0, 1.0);
        let s = update_s(&state, &x, None, &params).unwrap().exp();
        let p = state.log_p.exp();
        let col = p.col_sums();
        for r in 0..3 {
            for c in 0..2 {
                let want = p[(r, c)] / col[c] * libm::exp(state.log_eta[c]);
                assert!((s[(r, c)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn s_update_branches_differ_by_numerator_and_denominator() {
        let state = random_state(5, 2, 3);
        let x = SampleSet::new(Matrix::filled(2, 3, 0.5)).unwrap();
        let alpha1 = 0.6;
        let rho = 1.5;
        let base = RotParams::uniform(2, 3).with_alphas(0.0, alpha1, 1.0, 1.0).with_rho(rho);
        let ent = update_s(&state, &x, None, &base).unwrap();
        let quad = update_s(&state, &x, None, &base.clone().with_smoothness(Smoothness::Quadratic))
            .unwrap();
        // entropic: Y = (Z + rho log P)/(a1 + rho); quadratic: Y = (Z + rho log P - a1 P)/rho
        let p = state.log_p.exp();
        let mut y_ent = Matrix::zeros(2, 3);
        let mut y_quad = Matrix::zeros(2, 3);
        for r in 0..2 {
            for c in 0..3 {
                let common = state.dual_z[(r, c)] + rho * state.log_p[(r, c)];
                y_ent[(r, c)] = common / (alpha1 + rho);
                y_quad[(r, c)] = (common - alpha1 * p[(r, c)]) / rho;
            }
        }
        for (y, got) in [(y_ent, ent), (y_quad, quad)] {
            let lse = logsumexp_cols(&y).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let want = y[(r, c)] + state.log_eta[c] - lse[c];
                    assert!((got[(r, c)] - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn mu_update_examples() {
        let mut state = BadmmState::initial(&RotParams::uniform(2, 2));
        let params = RotParams::uniform(2, 2)
            .with_alphas(0.0, 1.0, 0.0, 1.0)
            .with_priors(vec![0.25, 0.75], vec![0.5, 0.5]);
        state.log_mu = vec![libm::log(0.3), libm::log(0.7)];
        let mu = update_mu(&state, &params).unwrap();
        assert!((libm::exp(mu[0]) - 0.3).abs() < 1e-15);

        let strong = params.clone().with_alphas(0.0, 1.0, 1e9, 1.0);
        let mu = update_mu(&state, &strong).unwrap();
        assert!((libm::exp(mu[0]) - 0.25).abs() < 1e-6);

        state.log_mu = vec![libm::log(0.5), libm::log(0.5)];
        let equal = params.with_alphas(0.0, 1.0, 1.0, 1.0).with_rho(1.0);
        let mu = update_mu(&state, &equal).unwrap();
        let s3 = libm::sqrt(3.0);
        assert!((libm::exp(mu[0]) - 1.0 / (1.0 + s3)).abs() < 1e-15);
        assert!((libm::exp(mu[1]) - s3 / (1.0 + s3)).abs() < 1e-15);
        assert!((libm::exp(mu[0]) - 0.366025).abs() < 1e-6);
    }

    #[test]
    fn duals_unchanged_at_consistent_state() {
        let params = RotParams::uniform(2, 3).with_rho(2.0);
        let mut state = BadmmState::initial(&params);
        state.dual_z = Matrix::filled(2, 3, 0.3);
        let (z, z1, z2) = update_duals(&state, &params);
        assert!(z.max_abs_diff(&state.dual_z).unwrap() < 1e-15);
        assert!(max_abs_diff(&z1, &state.dual_z1) < 1e-15);
        assert!(max_abs_diff(&z2, &state.dual_z2) < 1e-15);
    }

    #[test]
    fn dual_step_is_rho_times_gap() {
        let params = RotParams::uniform(2, 2).with_rho(2.0);
        let mut state = BadmmState::initial(&params);
        // P - S = 1 everywhere
        state.log_p = Matrix::filled(2, 2, libm::log(1.5));
        state.log_s = Matrix::filled(2, 2, libm::log(0.5));
        let (z, _, _) = update_duals(&state, &params);
        assert!(z.max_abs_diff(&Matrix::filled(2, 2, 2.0)).unwrap() < 1e-14);
    }

    #[test]
    fn mean_configuration_is_uniform_plan() {
        let x = SampleSet::from_rows(&[[1.0, 2.0, 0.5], [4.0, 3.0, 0.0]]).unwrap();
        let big = 1e8;
        let params = RotParams::uniform(2, 3)
            .with_alphas(0.0, big, big, big)
            .with_rho(big)
            .with_iters(16, 1);
        let (plan, trace) = solve_badmm(&x, &params).unwrap();
        assert!(plan.plan().max_abs_diff(&Matrix::filled(2, 3, 1.0 / 6.0)).unwrap() < 1e-6);
        assert_eq!(trace.objective.len(), 16);
        assert_eq!(trace.primal_residual.len(), 16);
    }

    proptest! {
        #[test]
        fn marginal_identities_hold_every_iteration(
            vals in proptest::collection::vec(0.0f64..3.0, 12),
            a1 in 1e-3f64..10.0,
            a23 in 1e-3f64..100.0,
            quad in any::<bool>(),
        ) {
            let x = SampleSet::new(Matrix::from_vec(3, 4, vals).unwrap()).unwrap();
            let smooth = if quad { Smoothness::Quadratic } else { Smoothness::Entropic };
            let params = RotParams::uniform(3, 4)
                .with_alphas(0.1, a1, a23, a23)
                .with_smoothness(smooth);
            let mut solver = BadmmSolver::new(&x, &params).unwrap();
            for _ in 0..10 {
                let step = solver.step().unwrap();
                prop_assert!(step.row_marginal_gap < 1e-10);
                prop_assert!(step.col_marginal_gap < 1e-10);
            }
        }
    }
}
