use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use rotpool::cli::{self, Command, Exit, Format, RunConfig, RunError};
use rotpool_core::pooling::{PresetKind, SolverKind};
use rotpool_core::Smoothness;

/// Regularized optimal transport pooling: pool sample sets and run the
/// convergence, stability, precision and runtime studies.
#[derive(Debug, Parser)]
#[command(name = "rotpool", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Sub>,

    /// Replay a run from a config file or a previous report.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Pool every set in the input files.
    Pool { inputs: Vec<PathBuf> },
    /// Compare the presets against the classic operators they imitate.
    Imitate,
    /// Solve one instance over a log-spaced grid of regularizer weights.
    Grid,
    /// Trace the objective against the number of outer modules.
    Convergence { inputs: Vec<PathBuf> },
    /// Median feed-forward time of both solvers.
    Bench,
    /// Pool groups of sets hierarchically.
    Hierarchy { inputs: Vec<PathBuf> },
}

#[derive(Debug, Args)]
struct Opts {
    #[arg(long, global = true, value_parser = solver_parser())]
    solver: Option<SolverKind>,
    #[arg(long, global = true, value_parser = smoothness_parser())]
    smoothness: Option<Smoothness>,
    #[arg(long, global = true, value_parser = preset_parser())]
    preset: Option<PresetKind>,
    #[arg(long, global = true)]
    alpha0: Option<f64>,
    #[arg(long, global = true)]
    alpha1: Option<f64>,
    #[arg(long, global = true)]
    alpha2: Option<f64>,
    #[arg(long, global = true)]
    alpha3: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Outer modules T (the largest T for `convergence`).
    #[arg(long, global = true, value_name = "T")]
    outer: Option<usize>,
    /// Sinkhorn steps per outer module.
    #[arg(long, global = true, value_name = "K")]
    inner: Option<usize>,
    /// Sample weights for the attention preset.
    #[arg(long, global = true, value_name = "PATH")]
    attention_weights: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Accept negative entries in input sets.
    #[arg(long, global = true)]
    allow_signed: bool,
    /// Exit with status 1 if any solve fails.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Record wall times (makes reports run-dependent).
    #[arg(long, global = true)]
    timings: bool,
    /// Features per generated instance.
    #[arg(long, global = true)]
    features: Option<usize>,
    /// Samples per generated instance.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Generated sets (`convergence`) or seeds (`imitate`).
    #[arg(long, global = true)]
    count: Option<usize>,
    /// Benchmark sizes as `DxN`, comma separated.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_dims)]
    dims: Vec<(usize, usize)>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Stand-in for infinite weights in `imitate`.
    #[arg(long, global = true)]
    infinity: Option<f64>,
    /// Operator that fuses member embeddings in `hierarchy`.
    #[arg(long, global = true, value_parser = preset_parser())]
    outer_preset: Option<PresetKind>,
}

fn solver_parser() -> impl TypedValueParser<Value = SolverKind> {
    PossibleValuesParser::new(["sinkhorn", "badmm"]).map(|s| match s.as_str() {
        "sinkhorn" => SolverKind::Sinkhorn,
        _ => SolverKind::Badmm,
    })
}

fn smoothness_parser() -> impl TypedValueParser<Value = Smoothness> {
    PossibleValuesParser::new(["entropic", "quadratic"]).map(|s| match s.as_str() {
        "entropic" => Smoothness::Entropic,
        _ => Smoothness::Quadratic,
    })
}

fn preset_parser() -> impl TypedValueParser<Value = PresetKind> {
    PossibleValuesParser::new(["mean", "max", "attention", "custom"]).map(|s| match s.as_str() {
        "mean" => PresetKind::Mean,
        "max" => PresetKind::Max,
        "attention" => PresetKind::Attention,
        _ => PresetKind::Custom,
    })
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (d, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected DxN, found {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    Ok((parse(d)?, parse(n)?))
}

fn build_config(cli: Cli) -> Result<(RunConfig, Option<PathBuf>), RunError> {
    let out = cli.out;
    if let Some(path) = cli.config {
        if cli.command.is_some() {
            return Err(RunError::Config("--config replays a run; do not pass a command as well".into()));
        }
        let mut config = RunConfig::load(&path)?;
        if let Some(f) = cli.opts.format {
            config.format = f;
        }
        return Ok((config, out));
    }
    let (command, inputs) = match cli.command {
        None => return Err(RunError::Config("no command given; see --help".into())),
        Some(Sub::Pool { inputs }) => (Command::Pool, inputs),
        Some(Sub::Imitate) => (Command::Imitate, Vec::new()),
        Some(Sub::Grid) => (Command::Grid, Vec::new()),
        Some(Sub::Convergence { inputs }) => (Command::Convergence, inputs),
        Some(Sub::Bench) => (Command::Bench, Vec::new()),
        Some(Sub::Hierarchy { inputs }) => (Command::Hierarchy, inputs),
    };
    let o = cli.opts;
    let config = RunConfig {
        command,
        inputs,
        solver: o.solver,
        smoothness: o.smoothness,
        preset: o.preset,
        alpha0: o.alpha0,
        alpha1: o.alpha1,
        alpha2: o.alpha2,
        alpha3: o.alpha3,
        rho: o.rho,
        tau: o.tau,
        outer: o.outer,
        inner: o.inner,
        attention_weights: o.attention_weights,
        seed: o.seed,
        allow_signed: o.allow_signed,
        strict: o.strict,
        format: o.format.unwrap_or_default(),
        timings: o.timings,
        features: o.features,
        samples: o.samples,
        count: o.count,
        dims: o.dims,
        trials: o.trials,
        infinity: o.infinity,
        outer_preset: o.outer_preset,
    };
    Ok((config, out))
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", cli::error_record(kind, message));
    ExitCode::from(Exit::ConfigError as u8)
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim_end()),
    };
    let (config, out) = match build_config(parsed) {
        Ok(v) => v,
        Err(e) => return fail(e.kind(), &e.to_string()),
    };
    let report = match cli::run(&config) {
        Ok(r) => r,
        Err(e) => return fail(e.kind(), &e.to_string()),
    };
    let written = match &out {
        Some(path) => File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            report.write(&mut w, config.format)?;
            w.flush()
        }),
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            report.write(&mut w, config.format).and_then(|_| w.flush())
        }
    };
    if let Err(e) = written {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return ExitCode::SUCCESS;
        }
        return fail("output", &format!("cannot write report: {e}"));
    }
    if report.failures > 0 {
        eprintln!(
            "{}",
            cli::error_record("solver", &format!("{} solve(s) failed; see the report", report.failures))
        );
    }
    ExitCode::from(report.exit(config.strict) as u8)
}
