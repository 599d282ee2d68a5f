//! Verification oracle and the numerical studies: convergence traces,
//! stability grids, imitation precision and runtime scaling.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use rotpool_core::badmm::BadmmSolver;
use rotpool_core::pooling::{ClassicPool, ParamTemplate, PresetKind, SolverKind};
use rotpool_core::sinkhorn::SinkhornSolver;
use rotpool_core::trace::relative_change;
use rotpool_core::{
    classic_pool, rotp, Error, Matrix, Result, RotParams, SampleSet, Smoothness, TransportPlan,
};
use serde::Serialize;

use crate::random;

/// Largest problem (`D * N`) the oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 64;
pub const ORACLE_ITERS: usize = 50_000;

/// Brute-force minimizer of the ROT objective over `Ω` for `alpha0 = 0`.
///
/// Exponentiated-gradient (mirror) descent on the simplex of all `D * N`
/// entries, started from `p0 q0ᵀ`. The objective is smooth relative to the
/// entropy with constant `alpha1 + alpha2 + alpha3` (twice `alpha1` for the
/// quadratic regularizer), so a constant step of one over that constant
/// decreases it monotonically; entropic smoothness makes the convergence
/// linear. Shares no code with either production solver.
pub fn oracle_solve(x: &SampleSet, params: &RotParams) -> Result<TransportPlan> {
    oracle_solve_with(x, params, ORACLE_ITERS)
}

pub fn oracle_solve_with(x: &SampleSet, params: &RotParams, iters: usize) -> Result<TransportPlan> {
    let (d, n) = (x.features(), x.samples());
    if d * n > ORACLE_MAX_CELLS {
        return Err(Error::InvalidInput(format!(
            "oracle is limited to D*N <= {ORACLE_MAX_CELLS}, got {d}x{n}"
        )));
    }
    if params.alpha0 != 0.0 {
        return Err(Error::InvalidInput("oracle requires alpha0 = 0".into()));
    }
    params.validate(d, n)?;
    let smooth_weight = match params.smoothness {
        Smoothness::Entropic => params.alpha1,
        Smoothness::Quadratic => 2.0 * params.alpha1,
    };
    let step = 1.0 / (smooth_weight + params.alpha2 + params.alpha3).max(1.0);

    let xs = x.data().as_slice();
    let log_p0: Vec<f64> = params.p0.iter().map(|v| v.ln()).collect();
    let log_q0: Vec<f64> = params.q0.iter().map(|v| v.ln()).collect();
    let mut log_p: Vec<f64> = (0..d * n).map(|i| log_p0[i / n] + log_q0[i % n]).collect();
    let mut p = vec![0.0; d * n];
    let mut rows = vec![0.0; d];
    let mut cols = vec![0.0; n];

    for _ in 0..iters {
        for (pv, lv) in p.iter_mut().zip(&log_p) {
            *pv = lv.exp();
        }
        rows.iter_mut().for_each(|v| *v = 0.0);
        cols.iter_mut().for_each(|v| *v = 0.0);
        for (i, pv) in p.iter().enumerate() {
            rows[i / n] += pv;
            cols[i % n] += pv;
        }
        for i in 0..d * n {
            let (r, c) = (i / n, i % n);
            let smooth = match params.smoothness {
                Smoothness::Entropic => params.alpha1 * log_p[i],
                Smoothness::Quadratic => 2.0 * params.alpha1 * p[i],
            };
            let grad = -xs[i]
                + smooth
                + params.alpha2 * (rows[r].ln() - log_p0[r])
                + params.alpha3 * (cols[c].ln() - log_q0[c]);
            log_p[i] -= step * grad;
        }
        let m = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + log_p.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        log_p.iter_mut().for_each(|v| *v -= lse);
    }
    TransportPlan::from_log(Matrix::from_vec(d, n, log_p)?)
}

/// A solver together with its smoothness regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sinkhorn,
    BadmmEntropic,
    BadmmQuadratic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sinkhorn, Variant::BadmmEntropic, Variant::BadmmQuadratic];

    pub fn solver(self) -> SolverKind {
        match self {
            Variant::Sinkhorn => SolverKind::Sinkhorn,
            _ => SolverKind::Badmm,
        }
    }

    pub fn smoothness(self) -> Smoothness {
        match self {
            Variant::BadmmQuadratic => Smoothness::Quadratic,
            _ => Smoothness::Entropic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sinkhorn => "sinkhorn",
            Variant::BadmmEntropic => "badmm_entropic",
            Variant::BadmmQuadratic => "badmm_quadratic",
        }
    }
}

/// Either solver behind a common one-step interface.
enum Stepper {
    Sinkhorn(SinkhornSolver),
    Badmm(BadmmSolver),
}

impl Stepper {
    fn new(x: &SampleSet, params: &RotParams, solver: SolverKind) -> Result<Self> {
        Ok(match solver {
            SolverKind::Sinkhorn => Stepper::Sinkhorn(SinkhornSolver::new(x, params)?),
            SolverKind::Badmm => Stepper::Badmm(BadmmSolver::new(x, params)?),
        })
    }

    fn step(&mut self) -> Result<f64> {
        match self {
            Stepper::Sinkhorn(s) => s.step(),
            Stepper::Badmm(s) => s.step().map(|r| r.objective),
        }
    }
}

pub const CONVERGENCE_TOL: f64 = 1e-4;

/// Objective trace of one variant on one set for `T = 1..t_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub variant: Variant,
    /// `<-X, P(T)>` for `T = 1..`.
    pub objective: Vec<f64>,
    /// Relative change between consecutive entries; `relative_change[i]`
    /// compares `T = i + 2` with `T = i + 1`.
    pub relative_change: Vec<f64>,
    /// Smallest `T` from which every later relative change stays below the
    /// tolerance. Never set for a single-entry trace.
    pub converged_at: Option<usize>,
    pub error: Option<String>,
}

/// Effective parameters of `variant` in the convergence study.
///
/// The Sinkhorn variant gets `tau = 1`: with `alpha0 = 0` and `tau = 0` it
/// would be a single pass and there would be nothing to trace.
pub fn convergence_params(base: &RotParams, variant: Variant) -> RotParams {
    let mut p = base.clone().with_smoothness(variant.smoothness());
    if variant == Variant::Sinkhorn && p.tau.is_none() {
        p.tau = Some(1.0);
    }
    p
}

/// Runs `variant` one outer module at a time, so every prefix `T` of the
/// trace shares the state of the previous one.
pub fn convergence_trace(x: &SampleSet, base: &RotParams, variant: Variant, t_max: usize, tol: f64) -> ConvergenceTrace {
    let params = convergence_params(base, variant);
    let mut objective = Vec::with_capacity(t_max);
    let mut error = None;
    match Stepper::new(x, &params, variant.solver()) {
        Ok(mut stepper) => {
            for _ in 0..t_max {
                match stepper.step() {
                    Ok(v) => objective.push(v),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
        }
        Err(e) => error = Some(e.to_string()),
    }
    let relative: Vec<f64> = objective.windows(2).map(|w| relative_change(w[0], w[1])).collect();
    let converged_at = if error.is_some() || relative.is_empty() {
        None
    } else {
        // a NaN change counts as not converged
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let tail_ok = relative.iter().rposition(|&r| !(r < tol)).map_or(0, |i| i + 1);
        (tail_ok < relative.len()).then_some(tail_ok + 2)
    };
    ConvergenceTrace {
        variant,
        objective,
        relative_change: relative,
        converged_at,
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub t_max: usize,
    pub tol: f64,
    /// Per set, per variant.
    pub traces: Vec<Vec<ConvergenceTrace>>,
    /// Per variant: largest `converged_at` over the batch, `None` if any set
    /// failed to converge.
    pub converged_by: Vec<(Variant, Option<usize>)>,
}

pub fn convergence_study(
    sets: &[SampleSet],
    base: &RotParams,
    variants: &[Variant],
    t_max: usize,
) -> Result<ConvergenceReport> {
    if t_max == 0 {
        return Err(Error::InvalidInput("t_max must be >= 1".into()));
    }
    let traces: Vec<Vec<ConvergenceTrace>> = sets
        .par_iter()
        .map(|x| {
            variants
                .iter()
                .map(|&v| convergence_trace(x, base, v, t_max, CONVERGENCE_TOL))
                .collect()
        })
        .collect();
    let converged_by = variants
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let worst = traces
                .iter()
                .map(|t| t[i].converged_at)
                .try_fold(0, |acc, c| c.map(|c| acc.max(c)));
            (v, worst)
        })
        .collect();
    Ok(ConvergenceReport {
        t_max,
        tol: CONVERGENCE_TOL,
        traces,
        converged_by,
    })
}

/// `count` log-spaced values from `10^lo` to `10^hi`.
pub fn log_space(lo: i32, hi: i32, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![10f64.powi(lo)];
    }
    (0..count)
        .map(|i| {
            let e = lo as f64 + (hi - lo) as f64 * i as f64 / (count - 1) as f64;
            // exact powers of ten where the exponent is integral
            if e.fract() == 0.0 {
                10f64.powi(e as i32)
            } else {
                10f64.powf(e)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub solver: SolverKind,
    pub smoothness: Smoothness,
    pub alpha0: f64,
    pub rho: f64,
    pub tau: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub seed: u64,
    pub features: usize,
    pub samples: usize,
    pub alpha1_axis: Vec<f64>,
    pub alpha23_axis: Vec<f64>,
}

impl GridConfig {
    /// The full 10 x 10 grid over `[1e-5, 1e4]` on a 5 x 10 instance.
    pub fn standard(solver: SolverKind, smoothness: Smoothness, alpha0: f64, seed: u64) -> Self {
        GridConfig {
            solver,
            smoothness,
            alpha0,
            rho: RotParams::DEFAULT_RHO,
            tau: None,
            outer_iters: RotParams::DEFAULT_OUTER,
            inner_iters: RotParams::DEFAULT_INNER,
            seed,
            features: 5,
            samples: 10,
            alpha1_axis: log_space(-5, 4, 10),
            alpha23_axis: log_space(-5, 4, 10),
        }
    }

    fn params(&self, alpha1: f64, alpha23: f64) -> RotParams {
        let mut p = RotParams::uniform(self.features, self.samples)
            .with_alphas(self.alpha0, alpha1, alpha23, alpha23)
            .with_rho(self.rho)
            .with_iters(self.outer_iters, self.inner_iters)
            .with_smoothness(self.smoothness);
        p.tau = self.tau;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub alpha1: f64,
    pub alpha23: f64,
    /// `‖P*‖₁` before normalization; absent for failed cells.
    pub plan_norm: Option<f64>,
    pub failed: bool,
    pub error: Option<String>,
    /// Seconds; only recorded when timing is requested.
    pub wall_time: Option<f64>,
}

impl GridCell {
    pub fn in_range(&self) -> bool {
        self.plan_norm.is_some_and(|m| (m - 1.0).abs() <= rotpool_core::pooling::MASS_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub config: GridConfig,
    /// `cells[i][j]` pairs `alpha1_axis[i]` with `alpha23_axis[j]`.
    pub cells: Vec<Vec<GridCell>>,
    pub failed: usize,
    /// Finite cells whose norm is outside `[1 - 1e-3, 1 + 1e-3]`.
    pub out_of_range: usize,
}

impl GridReport {
    pub fn iter(&self) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().flatten()
    }
}

/// Solves one fixed Gaussian instance for every `(alpha1, alpha2 = alpha3)`
/// cell. Solver failures and non-finite masses are recorded, never raised.
pub fn stability_grid(config: &GridConfig, timings: bool) -> Result<GridReport> {
    if config.alpha1_axis.is_empty() || config.alpha23_axis.is_empty() {
        return Err(Error::InvalidInput("grid axes must be nonempty".into()));
    }
    let x = random::gaussian_set(&mut random::rng(config.seed), config.features, config.samples);
    let coords: Vec<(usize, usize)> = (0..config.alpha1_axis.len())
        .flat_map(|i| (0..config.alpha23_axis.len()).map(move |j| (i, j)))
        .collect();
    let flat: Vec<GridCell> = coords
        .par_iter()
        .map(|&(i, j)| {
            let (a1, a23) = (config.alpha1_axis[i], config.alpha23_axis[j]);
            let start = Instant::now();
            let outcome = rotpool_core::solve(&x, &config.params(a1, a23), config.solver);
            let elapsed = start.elapsed();
            let (plan_norm, error) = match outcome {
                Ok((plan, _)) if plan.raw_mass().is_finite() => (Some(plan.raw_mass()), None),
                Ok((plan, _)) => (None, Some(format!("non-finite plan mass (log mass {})", plan.raw_log_mass()))),
                Err(e) => (None, Some(e.to_string())),
            };
            GridCell {
                alpha1: a1,
                alpha23: a23,
                failed: plan_norm.is_none(),
                plan_norm,
                error,
                wall_time: timings.then_some(elapsed.as_secs_f64()),
            }
        })
        .collect();
    let failed = flat.iter().filter(|c| c.failed).count();
    let out_of_range = flat.iter().filter(|c| !c.failed && !c.in_range()).count();
    let width = config.alpha23_axis.len();
    let cells = flat.chunks(width).map(<[GridCell]>::to_vec).collect();
    Ok(GridReport {
        config: config.clone(),
        cells,
        failed,
        out_of_range,
    })
}

/// Regularizer weights of the imitation study. `infinity` stands in for the
/// weights that are infinite in the exact correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionConfig {
    pub infinity: f64,
    /// `alpha1 = alpha3` of the max configuration.
    pub max_smoothing: f64,
    pub features: usize,
    pub samples: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        PrecisionConfig {
            infinity: 1e6,
            max_smoothing: 0.01,
            features: 5,
            samples: 10,
            outer_iters: 16,
            inner_iters: 64,
        }
    }
}

impl PrecisionConfig {
    /// Mean and attention use `(0, inf, inf, inf)` with `rho = inf`; max uses
    /// `(0, s, inf, s)` with the default `rho`.
    pub fn template(&self, kind: PresetKind, attention: &[f64], solver: SolverKind) -> ParamTemplate {
        let inf = self.infinity;
        let t = match kind {
            PresetKind::Mean | PresetKind::Custom => ParamTemplate::mean_with(inf),
            PresetKind::Attention => ParamTemplate::attention_with(attention.to_vec(), inf),
            PresetKind::Max => {
                ParamTemplate::new([0.0, self.max_smoothing, inf, self.max_smoothing], solver)
            }
        };
        t.with_solver(solver).with_iters(self.outer_iters, self.inner_iters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRow {
    pub preset: &'static str,
    pub solver: SolverKind,
    pub seed: u64,
    /// `‖f_rot(X) - oracle(X)‖∞`, absent on solver failure.
    pub pooled_error: Option<f64>,
    /// `‖P* - P_truth‖∞` where the ideal plan is known in closed form.
    pub plan_error: Option<f64>,
    pub error: Option<String>,
}

/// The ideal plan of a preset, where it is unique: uniform for mean,
/// `(1/D) 1 aᵀ` for attention. The max operator has a set of optimal plans.
fn truth_plan(kind: PresetKind, d: usize, n: usize, attention: &[f64]) -> Option<Matrix> {
    match kind {
        PresetKind::Mean => Some(Matrix::filled(d, n, 1.0 / (d * n) as f64)),
        PresetKind::Attention => Some(Matrix::from_fn(d, n, |_, c| attention[c] / d as f64)),
        _ => None,
    }
}

/// Imitation error of every (preset, solver) pair on one Gaussian instance
/// per seed. Attention weights are drawn from the same seed.
pub fn precision_study(
    config: &PrecisionConfig,
    presets: &[PresetKind],
    solvers: &[SolverKind],
    seeds: &[u64],
) -> Result<Vec<PrecisionRow>> {
    if presets.is_empty() {
        return Err(Error::InvalidInput("precision study needs at least one preset".into()));
    }
    let jobs: Vec<(u64, PresetKind, SolverKind)> = seeds
        .iter()
        .flat_map(|&s| presets.iter().flat_map(move |&p| solvers.iter().map(move |&v| (s, p, v))))
        .collect();
    jobs.par_iter()
        .map(|&(seed, kind, solver)| {
            let mut rng = random::rng(seed);
            let x = random::gaussian_set(&mut rng, config.features, config.samples);
            let a = random::simplex_point(&mut rng, config.samples);
            let oracle = match kind {
                PresetKind::Mean | PresetKind::Custom => ClassicPool::Mean,
                PresetKind::Max => ClassicPool::Max,
                PresetKind::Attention => ClassicPool::Attention(a.clone()),
            };
            let expected = classic_pool(&x, &oracle)?;
            let template = config.template(kind, &a, solver);
            let params = template.resolve(config.features, config.samples)?;
            let row = match rotp(&x, &params, solver) {
                Ok(report) => PrecisionRow {
                    preset: kind.name(),
                    solver,
                    seed,
                    pooled_error: Some(sup_diff(&report.pooled, &expected)),
                    plan_error: truth_plan(kind, config.features, config.samples, &a)
                        .map(|t| report.plan.plan().max_abs_diff(&t))
                        .transpose()?,
                    error: None,
                },
                Err(e) => PrecisionRow {
                    preset: kind.name(),
                    solver,
                    seed,
                    pooled_error: None,
                    plan_error: None,
                    error: Some(e.to_string()),
                },
            };
            Ok(row)
        })
        .collect()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub dims: Vec<(usize, usize)>,
    pub solvers: Vec<SolverKind>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub alpha0_values: Vec<f64>,
    pub trials: usize,
    pub warmup: usize,
    /// Also time the Sinkhorn solver without early exit.
    pub fixed_inner: bool,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(dims: Vec<(usize, usize)>, outer: usize, inner: usize, alpha0_values: Vec<f64>) -> Self {
        BenchConfig {
            dims,
            solvers: vec![SolverKind::Sinkhorn, SolverKind::Badmm],
            outer_iters: outer,
            inner_iters: inner,
            alpha0_values,
            trials: 10,
            warmup: 2,
            fixed_inner: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub features: usize,
    pub samples: usize,
    pub solver: SolverKind,
    pub alpha0: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// `false` when the Sinkhorn inner loop ran all `K` steps.
    pub early_exit: bool,
    /// Seconds per trial, warmups excluded.
    pub samples_s: Vec<f64>,
    pub median_s: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Times one feed-forward solve per trial. Configurations and trials run
/// sequentially so they do not compete for cores.
pub fn runtime_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.trials < 3 {
        return Err(Error::InvalidInput(format!("trials must be >= 3, got {}", config.trials)));
    }
    let mut rows = Vec::new();
    for &(d, n) in &config.dims {
        let x = random::lognormal_set(&mut random::rng(config.seed), d, n);
        for &alpha0 in &config.alpha0_values {
            for &solver in &config.solvers {
                let modes: &[bool] = match (solver, config.fixed_inner) {
                    (SolverKind::Sinkhorn, true) => &[true, false],
                    _ => &[true],
                };
                for &early_exit in modes {
                    let params = RotParams::uniform(d, n)
                        .with_alphas(alpha0, 1.0, 1.0, 1.0)
                        .with_iters(config.outer_iters, config.inner_iters)
                        .with_inner_tol(if early_exit { RotParams::DEFAULT_INNER_TOL } else { 0.0 });
                    let mut samples = Vec::with_capacity(config.trials);
                    for trial in 0..config.warmup + config.trials {
                        let start = Instant::now();
                        let out = rotp(&x, &params, solver)?;
                        let elapsed = start.elapsed();
                        std::hint::black_box(&out);
                        if trial >= config.warmup {
                            samples.push(elapsed.as_secs_f64());
                        }
                    }
                    rows.push(BenchRow {
                        features: d,
                        samples: n,
                        solver,
                        alpha0,
                        outer_iters: config.outer_iters,
                        inner_iters: config.inner_iters,
                        early_exit,
                        median_s: median(&samples),
                        samples_s: samples,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Pooled solve with wall time filled in.
pub fn timed_rotp(x: &SampleSet, params: &RotParams, solver: SolverKind) -> Result<rotpool_core::PoolReport> {
    let start = Instant::now();
    let mut report = rotp(x, params, solver)?;
    let elapsed: Duration = start.elapsed();
    report.wall_time = Some(elapsed);
    report.trace.wall_time = Some(elapsed);
    Ok(report)
}

/// Worker pool sized by `ROTPOOL_THREADS` (unset or 0 means all cores).
pub fn thread_pool() -> std::result::Result<rayon::ThreadPool, rayon::ThreadPoolBuildError> {
    let threads = std::env::var("ROTPOOL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build()
}
