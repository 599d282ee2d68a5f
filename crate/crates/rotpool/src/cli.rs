//! Run configurations and the report each command produces.
//!
//! A [`RunConfig`] is everything that determines a run's output. It is
//! embedded in every report, and `--config` accepts either a bare config or a
//! previous report, so any run can be replayed byte for byte.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rotpool_core::pooling::{ParamTemplate, PresetKind, SamplePrior, SolverKind};
use rotpool_core::{hrotp, HierarchicalSpec, RotParams, SampleSet, Smoothness};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, BenchConfig, GridConfig, PrecisionConfig, Variant};
use crate::io::{self as rio, IngestError, NamedSet};
use crate::random;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Pool,
    Imitate,
    Grid,
    Convergence,
    Bench,
    Hierarchy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// One JSON document with sections `config`, `summary`, `results`, `trace`.
    #[default]
    Json,
    /// One JSON record per line: the config, the summary, each result and
    /// each trace entry.
    Jsonl,
}

/// Every input that affects a run's report. Unset options take the
/// command's defaults; the resolved values appear in the report's
/// `effective` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub solver: Option<SolverKind>,
    #[serde(default)]
    pub smoothness: Option<Smoothness>,
    #[serde(default)]
    pub preset: Option<PresetKind>,
    #[serde(default)]
    pub alpha0: Option<f64>,
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub alpha2: Option<f64>,
    #[serde(default)]
    pub alpha3: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub outer: Option<usize>,
    #[serde(default)]
    pub inner: Option<usize>,
    #[serde(default)]
    pub attention_weights: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allow_signed: bool,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub format: Format,
    /// Record wall times. Reports with timings are not reproducible.
    #[serde(default)]
    pub timings: bool,
    /// Study instance size (`convergence`, `grid`, `imitate`).
    #[serde(default)]
    pub features: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    /// Number of generated sets (`convergence`) or seeds (`imitate`).
    #[serde(default)]
    pub count: Option<usize>,
    /// `(D, N)` points of the runtime benchmark.
    #[serde(default)]
    pub dims: Vec<(usize, usize)>,
    #[serde(default)]
    pub trials: Option<usize>,
    /// Stand-in for infinite weights in the imitation study.
    #[serde(default)]
    pub infinity: Option<f64>,
    /// Operator fusing the member embeddings (`hierarchy`).
    #[serde(default)]
    pub outer_preset: Option<PresetKind>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            inputs: Vec::new(),
            solver: None,
            smoothness: None,
            preset: None,
            alpha0: None,
            alpha1: None,
            alpha2: None,
            alpha3: None,
            rho: None,
            tau: None,
            outer: None,
            inner: None,
            attention_weights: None,
            seed: 0,
            allow_signed: false,
            strict: false,
            format: Format::Json,
            timings: false,
            features: None,
            samples: None,
            count: None,
            dims: Vec::new(),
            trials: None,
            infinity: None,
            outer_preset: None,
        }
    }

    /// Reads a config from a file holding either the config itself or a
    /// report that embeds it.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let inner = value.pointer("/config/run").cloned().unwrap_or(value);
        serde_json::from_value(inner).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write report: {0}")]
    Output(#[from] io::Error),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Ingest(_) => "input",
            RunError::Output(_) => "output",
        }
    }
}

impl From<rotpool_core::Error> for RunError {
    fn from(e: rotpool_core::Error) -> Self {
        RunError::Config(e.to_string())
    }
}

/// Exit status of a run: 0 on success, 1 when a solver failed under
/// `--strict`, 2 on configuration or input errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    SolverFailure = 1,
    ConfigError = 2,
}

#[derive(Debug, Serialize)]
struct ConfigSection<'a, E: Serialize> {
    run: &'a RunConfig,
    effective: E,
}

/// A finished run: serializable sections plus the number of solver failures.
pub struct Report {
    config: serde_json::Value,
    summary: serde_json::Value,
    results: Vec<serde_json::Value>,
    trace: Vec<serde_json::Value>,
    pub failures: usize,
}

// Sections are held as `Value`s. Objects keep their keys sorted and numbers
// keep the exact f64, so the written bytes depend only on the values.
fn value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

impl Report {
    fn new<E: Serialize, S: Serialize, R: Serialize, T: Serialize>(
        run: &RunConfig,
        effective: E,
        summary: S,
        results: &[R],
        trace: &[T],
        failures: usize,
    ) -> Self {
        Report {
            config: value(&ConfigSection { run, effective }),
            summary: value(&summary),
            results: results.iter().map(value).collect(),
            trace: trace.iter().map(value).collect(),
            failures,
        }
    }

    pub fn write<W: Write>(&self, mut w: W, format: Format) -> io::Result<()> {
        match format {
            Format::Json => {
                #[derive(Serialize)]
                struct Doc<'a> {
                    config: &'a serde_json::Value,
                    summary: &'a serde_json::Value,
                    results: &'a [serde_json::Value],
                    trace: &'a [serde_json::Value],
                }
                let doc = Doc {
                    config: &self.config,
                    summary: &self.summary,
                    results: &self.results,
                    trace: &self.trace,
                };
                rio::write_json(&mut w, &doc).map_err(io::Error::other)?;
                writeln!(w)
            }
            Format::Jsonl => {
                let mut line = |section: &str, v: &serde_json::Value| -> io::Result<()> {
                    let rec = serde_json::json!({ "section": section, "record": v });
                    rio::write_json(&mut w, &rec).map_err(io::Error::other)?;
                    writeln!(w)
                };
                line("config", &self.config)?;
                line("summary", &self.summary)?;
                for r in &self.results {
                    line("result", r)?;
                }
                for t in &self.trace {
                    line("trace", t)?;
                }
                Ok(())
            }
        }
    }

    pub fn to_bytes(&self, format: Format) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf, format).expect("writing into memory");
        buf
    }

    pub fn exit(&self, strict: bool) -> Exit {
        if strict && self.failures > 0 {
            Exit::SolverFailure
        } else {
            Exit::Ok
        }
    }

    pub fn summary(&self) -> &serde_json::Value {
        &self.summary
    }

    pub fn results(&self) -> &[serde_json::Value] {
        &self.results
    }
}

/// Runs `config` on the worker pool sized by `ROTPOOL_THREADS`.
pub fn run(config: &RunConfig) -> Result<Report, RunError> {
    let pool = diagnostics::thread_pool().map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match config.command {
        Command::Pool => run_pool(config),
        Command::Imitate => run_imitate(config),
        Command::Grid => run_grid(config),
        Command::Convergence => run_convergence(config),
        Command::Bench => run_bench(config),
        Command::Hierarchy => run_hierarchy(config),
    })
}

/// Resolved solver parameters as they appear in reports.
#[derive(Debug, Clone, Serialize)]
pub struct ParamsRecord {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub p0: Vec<f64>,
    pub q0: Vec<f64>,
    pub rho: f64,
    pub tau: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub smoothness: Smoothness,
}

impl From<&RotParams> for ParamsRecord {
    fn from(p: &RotParams) -> Self {
        ParamsRecord {
            alpha0: p.alpha0,
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            alpha3: p.alpha3,
            p0: p.p0.clone(),
            q0: p.q0.clone(),
            rho: p.rho,
            tau: p.tau(),
            outer_iters: p.outer_iters,
            inner_iters: p.inner_iters,
            inner_tol: p.inner_tol,
            smoothness: p.smoothness,
        }
    }
}

/// Shape-free template as it appears in reports.
#[derive(Debug, Clone, Serialize)]
struct TemplateRecord {
    alphas: [f64; 4],
    sample_prior: Option<Vec<f64>>,
    rho: f64,
    tau: Option<f64>,
    outer_iters: usize,
    inner_iters: usize,
    inner_tol: f64,
    smoothness: Smoothness,
    solver: SolverKind,
}

impl From<&ParamTemplate> for TemplateRecord {
    fn from(t: &ParamTemplate) -> Self {
        TemplateRecord {
            alphas: t.alphas,
            sample_prior: match &t.sample_prior {
                SamplePrior::Uniform => None,
                SamplePrior::Weights(w) => Some(w.clone()),
            },
            rho: t.rho,
            tau: t.tau,
            outer_iters: t.outer_iters,
            inner_iters: t.inner_iters,
            inner_tol: t.inner_tol,
            smoothness: t.smoothness,
            solver: t.solver,
        }
    }
}

fn config_error(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

fn load_sets(config: &RunConfig) -> Result<Vec<NamedSet>, RunError> {
    if config.inputs.is_empty() {
        return Err(config_error(format!(
            "{} needs at least one input file",
            command_name(config.command)
        )));
    }
    let mut sets = Vec::new();
    for path in &config.inputs {
        sets.extend(rio::ingest(path, config.allow_signed)?);
    }
    Ok(sets)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Pool => "pool",
        Command::Imitate => "imitate",
        Command::Grid => "grid",
        Command::Convergence => "convergence",
        Command::Bench => "bench",
        Command::Hierarchy => "hierarchy",
    }
}

/// The template selected by `--preset` (or the custom alphas) with every
/// explicit flag applied on top.
fn template(config: &RunConfig, preset: Option<PresetKind>, weights: Option<Vec<f64>>) -> Result<ParamTemplate, RunError> {
    let mut t = match preset {
        Some(PresetKind::Mean) => ParamTemplate::mean(),
        Some(PresetKind::Max) => ParamTemplate::max(),
        Some(PresetKind::Attention) => {
            let w = weights.ok_or_else(|| config_error("the attention preset needs --attention-weights"))?;
            ParamTemplate::attention(w)
        }
        Some(PresetKind::Custom) | None => ParamTemplate::new([0.0, 1.0, 1.0, 1.0], SolverKind::Sinkhorn),
    };
    for (slot, v) in t.alphas.iter_mut().zip([config.alpha0, config.alpha1, config.alpha2, config.alpha3]) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(rho) = config.rho {
        t.rho = rho;
    }
    if config.tau.is_some() {
        t.tau = config.tau;
    }
    if let Some(outer) = config.outer {
        t.outer_iters = outer;
    }
    if let Some(inner) = config.inner {
        t.inner_iters = inner;
    }
    if let Some(s) = config.smoothness {
        t.smoothness = s;
    }
    if let Some(s) = config.solver {
        t.solver = s;
    }
    if t.solver == SolverKind::Sinkhorn && t.smoothness == Smoothness::Quadratic {
        return Err(config_error("the Sinkhorn solver supports entropic smoothness only"));
    }
    Ok(t)
}

fn load_weights(config: &RunConfig) -> Result<Option<Vec<f64>>, RunError> {
    config
        .attention_weights
        .as_deref()
        .map(rio::read_weights)
        .transpose()
        .map_err(RunError::from)
}

#[derive(Debug, Serialize)]
struct PoolRecord {
    id: String,
    features: usize,
    samples: usize,
    params: ParamsRecord,
    pooled: Option<Vec<f64>>,
    plan: Option<Vec<Vec<f64>>>,
    raw_mass: Option<f64>,
    mass_in_range: Option<bool>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct TraceRecord {
    id: String,
    objective: Vec<f64>,
    primal_residual: Vec<f64>,
    inner_iterations: Vec<usize>,
    iterations_used: usize,
    notes: Vec<String>,
    wall_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CountSummary {
    items: usize,
    failed: usize,
}

fn run_pool(config: &RunConfig) -> Result<Report, RunError> {
    let sets = load_sets(config)?;
    let weights = load_weights(config)?;
    let t = template(config, config.preset, weights)?;
    // resolve everything up front so shape errors are config errors
    let params: Vec<RotParams> = sets
        .iter()
        .map(|s| {
            t.resolve(s.set.features(), s.set.samples())
                .map_err(|e| config_error(format!("set {}: {e}", s.id)))
        })
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<(PoolRecord, Option<TraceRecord>)> = sets
        .par_iter()
        .zip(params.par_iter())
        .map(|(s, p)| {
            let start = Instant::now();
            let out = rotpool_core::rotp(&s.set, p, t.solver);
            let elapsed = start.elapsed().as_secs_f64();
            let (d, n) = s.set.data().shape();
            let mut rec = PoolRecord {
                id: s.id.clone(),
                features: d,
                samples: n,
                params: p.into(),
                pooled: None,
                plan: None,
                raw_mass: None,
                mass_in_range: None,
                error: None,
            };
            match out {
                Ok(report) => {
                    let plan = report.plan.plan();
                    rec.plan = Some((0..d).map(|r| plan.row(r).to_vec()).collect());
                    rec.pooled = Some(report.pooled);
                    rec.raw_mass = Some(report.stability.raw_mass);
                    rec.mass_in_range = Some(report.stability.mass_in_range);
                    let tr = report.trace;
                    let trace = TraceRecord {
                        id: s.id.clone(),
                        objective: tr.objective,
                        primal_residual: tr.primal_residual,
                        inner_iterations: tr.inner_iterations,
                        iterations_used: tr.iterations_used,
                        notes: tr.notes,
                        wall_time_s: config.timings.then_some(elapsed),
                    };
                    (rec, Some(trace))
                }
                Err(e) => {
                    rec.error = Some(e.to_string());
                    (rec, None)
                }
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|(r, _)| r.error.is_some()).count();
    let (results, traces): (Vec<PoolRecord>, Vec<Option<TraceRecord>>) = outcomes.into_iter().unzip();
    let traces: Vec<TraceRecord> = traces.into_iter().flatten().collect();
    let effective = serde_json::json!({
        "preset": config.preset.unwrap_or(PresetKind::Custom),
        "template": value(&TemplateRecord::from(&t)),
    });
    Ok(Report::new(
        config,
        effective,
        CountSummary {
            items: results.len(),
            failed: failures,
        },
        &results,
        &traces,
        failures,
    ))
}

#[derive(Debug, Serialize)]
struct ImitateEffective {
    precision: PrecisionConfig,
    presets: Vec<PresetKind>,
    solvers: Vec<SolverKind>,
    seeds: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct ImitateSummary {
    preset: PresetKind,
    solver: SolverKind,
    failed: usize,
    max_pooled_error: Option<f64>,
    max_plan_error: Option<f64>,
}

fn solvers_of(config: &RunConfig) -> Vec<SolverKind> {
    match config.solver {
        Some(s) => vec![s],
        None => vec![SolverKind::Sinkhorn, SolverKind::Badmm],
    }
}

fn max_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.fold(None, |acc, v| match (acc, v) {
        (Some(a), Some(b)) => Some(f64::max(a, b)),
        (a, b) => a.or(b),
    })
}

fn run_imitate(config: &RunConfig) -> Result<Report, RunError> {
    let mut precision = PrecisionConfig::default();
    if let Some(v) = config.infinity {
        precision.infinity = v;
    }
    if let Some(v) = config.outer {
        precision.outer_iters = v;
    }
    if let Some(v) = config.inner {
        precision.inner_iters = v;
    }
    if let Some(v) = config.features {
        precision.features = v;
    }
    if let Some(v) = config.samples {
        precision.samples = v;
    }
    let presets = match config.preset {
        Some(PresetKind::Custom) => return Err(config_error("imitate compares the mean, max and attention presets")),
        Some(p) => vec![p],
        None => vec![PresetKind::Mean, PresetKind::Max, PresetKind::Attention],
    };
    let solvers = solvers_of(config);
    let seeds: Vec<u64> = (0..config.count.unwrap_or(20) as u64).map(|k| config.seed + k).collect();
    let rows = diagnostics::precision_study(&precision, &presets, &solvers, &seeds)?;
    let summary: Vec<ImitateSummary> = presets
        .iter()
        .flat_map(|&p| solvers.iter().map(move |&s| (p, s)))
        .map(|(preset, solver)| {
            let mine: Vec<_> = rows.iter().filter(|r| r.preset == preset.name() && r.solver == solver).collect();
            ImitateSummary {
                preset,
                solver,
                failed: mine.iter().filter(|r| r.error.is_some()).count(),
                max_pooled_error: max_of(mine.iter().map(|r| r.pooled_error)),
                max_plan_error: max_of(mine.iter().map(|r| r.plan_error)),
            }
        })
        .collect();
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let effective = ImitateEffective {
        precision,
        presets,
        solvers,
        seeds,
    };
    Ok(Report::new(config, effective, summary, &rows, &[] as &[()], failures))
}

#[derive(Debug, Serialize)]
struct GridSummary {
    cells: usize,
    failed: usize,
    out_of_range: usize,
}

#[derive(Debug, Serialize)]
struct GridRecord<'a> {
    i: usize,
    j: usize,
    #[serde(flatten)]
    cell: &'a diagnostics::GridCell,
}

fn run_grid(config: &RunConfig) -> Result<Report, RunError> {
    let solver = config.solver.unwrap_or(SolverKind::Badmm);
    let smoothness = config.smoothness.unwrap_or(Smoothness::Entropic);
    let mut grid = GridConfig::standard(solver, smoothness, config.alpha0.unwrap_or(0.0), config.seed);
    if let Some(v) = config.rho {
        grid.rho = v;
    }
    grid.tau = config.tau.or(grid.tau);
    if let Some(v) = config.outer {
        grid.outer_iters = v;
    }
    if let Some(v) = config.inner {
        grid.inner_iters = v;
    }
    if let Some(v) = config.features {
        grid.features = v;
    }
    if let Some(v) = config.samples {
        grid.samples = v;
    }
    if solver == SolverKind::Sinkhorn && smoothness == Smoothness::Quadratic {
        return Err(config_error("the Sinkhorn solver supports entropic smoothness only"));
    }
    let report = diagnostics::stability_grid(&grid, config.timings)?;
    let records: Vec<GridRecord> = report
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, cell)| GridRecord { i, j, cell }))
        .collect();
    let summary = GridSummary {
        cells: records.len(),
        failed: report.failed,
        out_of_range: report.out_of_range,
    };
    Ok(Report::new(config, &report.config, summary, &records, &[] as &[()], report.failed))
}

#[derive(Debug, Serialize)]
struct ConvergenceEffective {
    base: ParamsRecord,
    variants: Vec<Variant>,
    t_max: usize,
    tol: f64,
    /// Where the sets came from: input files, or generated log-normal data.
    source: String,
}

#[derive(Debug, Serialize)]
struct ConvergenceSummary {
    variant: Variant,
    /// Largest `converged_at` over the batch; `null` if any set never
    /// settled.
    converged_by: Option<usize>,
    failed: usize,
}

#[derive(Debug, Serialize)]
struct ConvergenceRecord<'a> {
    set: &'a str,
    variant: Variant,
    converged_at: Option<usize>,
    final_objective: Option<f64>,
    error: &'a Option<String>,
}

#[derive(Debug, Serialize)]
struct ConvergenceTraceRecord<'a> {
    set: &'a str,
    variant: Variant,
    objective: &'a [f64],
    relative_change: &'a [f64],
}

fn variants_of(config: &RunConfig) -> Vec<Variant> {
    match (config.solver, config.smoothness) {
        (None, None) => Variant::ALL.to_vec(),
        (Some(SolverKind::Sinkhorn), _) => vec![Variant::Sinkhorn],
        (Some(SolverKind::Badmm), Some(Smoothness::Quadratic)) => vec![Variant::BadmmQuadratic],
        (Some(SolverKind::Badmm), Some(Smoothness::Entropic)) => vec![Variant::BadmmEntropic],
        (Some(SolverKind::Badmm), None) => vec![Variant::BadmmEntropic, Variant::BadmmQuadratic],
        (None, Some(Smoothness::Quadratic)) => vec![Variant::BadmmQuadratic],
        (None, Some(Smoothness::Entropic)) => vec![Variant::Sinkhorn, Variant::BadmmEntropic],
    }
}

fn run_convergence(config: &RunConfig) -> Result<Report, RunError> {
    let (named, source): (Vec<NamedSet>, String) = if config.inputs.is_empty() {
        let (count, d, n) = (
            config.count.unwrap_or(50),
            config.features.unwrap_or(100),
            config.samples.unwrap_or(500),
        );
        let mut rng = random::rng(config.seed);
        let sets = (0..count)
            .map(|k| NamedSet {
                id: format!("generated-{}", k + 1),
                set: random::lognormal_set(&mut rng, d, n),
            })
            .collect();
        (sets, format!("{count} log-normal sets of {d}x{n}"))
    } else {
        (load_sets(config)?, "input files".into())
    };
    if named.is_empty() {
        return Err(config_error("convergence needs at least one set"));
    }
    let t_max = config.outer.unwrap_or(32);
    let variants = variants_of(config);
    let (d, n) = named[0].set.data().shape();
    let mut base = RotParams::uniform(d, n).with_alphas(
        config.alpha0.unwrap_or(0.0),
        config.alpha1.unwrap_or(1.0),
        config.alpha2.unwrap_or(1.0),
        config.alpha3.unwrap_or(1.0),
    );
    if let Some(v) = config.rho {
        base.rho = v;
    }
    base.tau = config.tau;
    if let Some(v) = config.inner {
        base.inner_iters = v;
    }
    base.outer_iters = t_max;
    let sets: Vec<SampleSet> = named.iter().map(|s| s.set.clone()).collect();
    if let Some(s) = sets.iter().find(|s| s.data().shape() != (d, n)) {
        // priors are uniform, so only the shape has to be re-resolved
        let (d2, n2) = s.data().shape();
        return Err(config_error(format!(
            "convergence sets must share one shape, found {d}x{n} and {d2}x{n2}"
        )));
    }
    let report = diagnostics::convergence_study(&sets, &base, &variants, t_max)?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (s, per_set) in named.iter().zip(&report.traces) {
        for t in per_set {
            records.push(ConvergenceRecord {
                set: &s.id,
                variant: t.variant,
                converged_at: t.converged_at,
                final_objective: t.objective.last().copied(),
                error: &t.error,
            });
            traces.push(ConvergenceTraceRecord {
                set: &s.id,
                variant: t.variant,
                objective: &t.objective,
                relative_change: &t.relative_change,
            });
        }
    }
    let summary: Vec<ConvergenceSummary> = report
        .converged_by
        .iter()
        .enumerate()
        .map(|(i, &(variant, converged_by))| ConvergenceSummary {
            variant,
            converged_by,
            failed: report.traces.iter().filter(|t| t[i].error.is_some()).count(),
        })
        .collect();
    let failures = summary.iter().map(|s| s.failed).sum();
    let effective = ConvergenceEffective {
        base: (&base).into(),
        variants,
        t_max,
        tol: report.tol,
        source,
    };
    Ok(Report::new(config, effective, summary, &records, &traces, failures))
}

#[derive(Debug, Serialize)]
struct BenchOrdering {
    features: usize,
    samples: usize,
    alpha0: f64,
    sinkhorn_median_s: f64,
    sinkhorn_fixed_inner_median_s: Option<f64>,
    badmm_median_s: f64,
    faster: SolverKind,
}

fn run_bench(config: &RunConfig) -> Result<Report, RunError> {
    let dims = if config.dims.is_empty() {
        vec![(5, 50)]
    } else {
        config.dims.clone()
    };
    let alpha0s = match config.alpha0 {
        Some(a) => vec![a],
        None => vec![0.0, 0.1],
    };
    let mut bench = BenchConfig::new(dims, config.outer.unwrap_or(50), config.inner.unwrap_or(50), alpha0s);
    bench.seed = config.seed;
    if let Some(t) = config.trials {
        bench.trials = t;
    }
    if let Some(s) = config.solver {
        bench.solvers = vec![s];
    }
    let rows = diagnostics::runtime_bench(&bench)?;
    let find = |d: usize, n: usize, a0: f64, solver: SolverKind, early: bool| {
        rows.iter()
            .find(|r| r.features == d && r.samples == n && r.alpha0 == a0 && r.solver == solver && r.early_exit == early)
            .map(|r| r.median_s)
    };
    let mut orderings = Vec::new();
    for &(d, n) in &bench.dims {
        for &a0 in &bench.alpha0_values {
            if let (Some(s), Some(b)) = (find(d, n, a0, SolverKind::Sinkhorn, true), find(d, n, a0, SolverKind::Badmm, true)) {
                orderings.push(BenchOrdering {
                    features: d,
                    samples: n,
                    alpha0: a0,
                    sinkhorn_median_s: s,
                    sinkhorn_fixed_inner_median_s: find(d, n, a0, SolverKind::Sinkhorn, false),
                    badmm_median_s: b,
                    faster: if b < s { SolverKind::Badmm } else { SolverKind::Sinkhorn },
                });
            }
        }
    }
    Ok(Report::new(config, &bench, orderings, &rows, &[] as &[()], 0))
}

#[derive(Debug, Serialize)]
struct HierarchyRecord {
    id: String,
    members: Vec<String>,
    pooled: Option<Vec<f64>>,
    error: Option<String>,
}

fn run_hierarchy(config: &RunConfig) -> Result<Report, RunError> {
    if config.inputs.is_empty() {
        return Err(config_error("hierarchy needs at least one input file"));
    }
    if config.preset == Some(PresetKind::Attention) || config.outer_preset == Some(PresetKind::Attention) {
        return Err(config_error(
            "attention weights are tied to one set size; use mean, max or custom weights in a hierarchy",
        ));
    }
    let mut groups = Vec::new();
    for path in &config.inputs {
        groups.extend(rio::ingest_groups(path, config.allow_signed)?);
    }
    let inner = template(config, config.preset.or(Some(PresetKind::Mean)), None)?;
    let outer = match config.outer_preset.unwrap_or(PresetKind::Mean) {
        PresetKind::Max => ParamTemplate::max(),
        PresetKind::Custom => ParamTemplate::new([0.0, 1.0, 1.0, 1.0], SolverKind::Sinkhorn),
        _ => ParamTemplate::mean(),
    };
    let spec = HierarchicalSpec::new(inner.clone(), outer.clone());
    let results: Vec<HierarchyRecord> = groups
        .par_iter()
        .map(|g| {
            let sets: Vec<SampleSet> = g.sets.iter().map(|s| s.set.clone()).collect();
            let out = hrotp(&sets, &spec);
            HierarchyRecord {
                id: g.id.clone(),
                members: g.sets.iter().map(|s| s.id.clone()).collect(),
                error: out.as_ref().err().map(ToString::to_string),
                pooled: out.ok(),
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let effective = serde_json::json!({
        "inner": value(&TemplateRecord::from(&inner)),
        "outer": value(&TemplateRecord::from(&outer)),
        "feature_map": "identity",
    });
    Ok(Report::new(
        config,
        effective,
        CountSummary {
            items: results.len(),
            failed: failures,
        },
        &results,
        &[] as &[()],
        failures,
    ))
}

/// One-line JSON error record for standard error.
pub fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}
