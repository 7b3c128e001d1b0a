//! Command-line harness: `gen`, `factorize`, `eval`, `sweep`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::clustering::{assign_from_factor, evaluate, word_reference_classes, Axis, ClusteringError};
use crate::io::{
    gen_synthetic, read_dataset, write_dataset, write_trace_csv, Dataset, IoError, RunMetrics, RunRecord,
    SyntheticParams,
};
use crate::model::{FactorModel, Hyperparams};
use crate::solvers::{solve, Algorithm, InitKind, IterationTrace, SolveError, SolverConfig};

pub const RUN_FILE: &str = "run.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Parser)]
#[command(name = "ortho-nmf", version, about = "Orthogonal nonnegative matrix tri-factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted co-cluster dataset directory.
    Gen(GenArgs),
    /// Factorize one dataset and write run.json and trace.csv.
    Factorize(FactorizeArgs),
    /// Score a finished run against a dataset's labels.
    Eval(EvalArgs),
    /// Vary alpha or beta with the other fixed, one run per value.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Fraction of entries kept.
    #[arg(long, default_value_t = 1.0)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Solver flags shared by `factorize` and `sweep`.
#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Dataset directory or a bare .mtx file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::ConvergentBnmtf)]
    pub algo: Algorithm,
    #[arg(long, default_value_t = 1e-8)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub step: f64,
    /// Outer iterations.
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Trials per inner loop of the convergent drivers.
    #[arg(long, default_value_t = 60)]
    pub inner_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sets both P and Q; defaults to the number of document classes.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Always run all iterations, even once converged.
    #[arg(long)]
    pub fixed_iters: bool,
    /// Write measured milliseconds to the trace CSV instead of 0.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// run.json written by `factorize`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also store the metrics in a copy of the run record.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Alpha,
    Beta,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<f64>,
    /// Value of the parameter that is not swept.
    #[arg(long, default_value_t = 1.0)]
    pub fixed: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => gen(&args),
        Command::Factorize(args) => factorize(&args),
        Command::Eval(args) => eval(&args),
        Command::Sweep(args) => sweep(&args),
    }
}

fn gen(args: &GenArgs) -> Result<(), CliError> {
    let params = SyntheticParams {
        rows: args.rows,
        cols: args.cols,
        p: args.p,
        q: args.q,
        noise: args.noise,
        sparsity: args.sparsity,
        seed: args.seed,
    };
    let (ds, _) = gen_synthetic(&params)?;
    write_dataset(&args.out, &ds)?;
    Ok(())
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn ranks(args: &SolveArgs, ds: &Dataset) -> Result<(usize, usize), CliError> {
    let classes = ds.doc_labels.as_ref().map(|l| l.n_clusters());
    let pick = |explicit: Option<usize>| {
        explicit.or(args.rank).or(classes).ok_or_else(|| {
            CliError::Usage("no labels.csv next to the matrix; pass --rank (or --p and --q)".into())
        })
    };
    let (p, q) = (pick(args.p)?, pick(args.q)?);
    if p != q {
        eprintln!("warning: p = {p} differs from q = {q}");
    }
    Ok((p, q))
}

fn config(args: &SolveArgs) -> SolverConfig {
    SolverConfig {
        algorithm: args.algo,
        delta: args.delta,
        sigma: args.sigma,
        step: args.step,
        max_outer_iters: args.iters,
        max_inner_iters: args.inner_cap,
        seed: args.seed,
        init: InitKind::UniformRandom,
        early_stop: !args.fixed_iters,
    }
}

/// Document and word scores of a model, when the dataset has document labels.
/// Word classes come from `word_labels.csv` if present, otherwise from the
/// most frequent document class of each word.
pub fn run_metrics(ds: &Dataset, model: &FactorModel) -> Result<Option<RunMetrics>, CliError> {
    let Some(doc_truth) = &ds.doc_labels else {
        return Ok(None);
    };
    let documents = evaluate(&assign_from_factor(&model.c, Axis::Columns)?, doc_truth)?;
    let word_truth = match &ds.word_labels {
        Some(w) => w.clone(),
        None => word_reference_classes(&ds.matrix, doc_truth)?.assignment,
    };
    let words = evaluate(&assign_from_factor(&model.b, Axis::Rows)?, &word_truth)?;
    Ok(Some(RunMetrics { documents, words }))
}

/// Runs one solve and always produces a record; a solver failure leaves its
/// partial trace in the record and is returned alongside it.
fn run_once(ds: &Dataset, hp: Hyperparams, cfg: SolverConfig) -> Result<(RunRecord, Option<SolveError>), CliError> {
    let started_at = now();
    let (trace, model, error) = match solve(&ds.matrix, &hp, &cfg, None) {
        Ok(sol) => (sol.trace, Some(sol.model), None),
        Err(SolveError::InnerLoopExhausted {
            factor,
            iteration,
            trials,
            trace,
        }) => {
            let trace = (*trace).clone();
            let err = SolveError::InnerLoopExhausted {
                factor,
                iteration,
                trials,
                trace: Box::new(IterationTrace::default()),
            };
            (trace, None, Some(err))
        }
        Err(e) => return Err(e.into()),
    };
    let metrics = match &model {
        Some(m) => run_metrics(ds, m)?,
        None => None,
    };
    let record = RunRecord {
        dataset: ds.name.clone(),
        config: cfg,
        hyperparams: hp,
        violations: trace.monotonicity_violations(),
        trace,
        metrics,
        started_at,
        finished_at: now(),
        error: error.as_ref().map(ToString::to_string),
        model,
    };
    Ok((record, error))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    Ok(())
}

fn factorize(args: &FactorizeArgs) -> Result<(), CliError> {
    let ds = read_dataset(&args.solve.input)?;
    let (p, q) = ranks(&args.solve, &ds)?;
    let hp = Hyperparams::new(args.alpha, args.beta, p, q);
    let (record, error) = run_once(&ds, hp, config(&args.solve))?;
    create_dir(&args.out)?;
    write_trace_csv(args.out.join(TRACE_FILE), &record.trace, args.solve.timing)?;
    record.write(args.out.join(RUN_FILE))?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut record = RunRecord::read(&args.run)?;
    let ds = read_dataset(&args.dataset)?;
    let model = record
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{} holds no factors to evaluate", args.run.display())))?;
    let metrics = run_metrics(&ds, model)?
        .ok_or_else(|| CliError::Usage(format!("{} has no labels.csv", args.dataset.display())))?;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    // a closed pipe on stdout is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    if let Some(out) = &args.out {
        record.metrics = Some(metrics);
        record.write(out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    param: &'a str,
    value: f64,
    algorithm: Algorithm,
    iterations: usize,
    final_objective: f64,
    violations: usize,
    total_inner: usize,
    status: &'a str,
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let ds = read_dataset(&args.solve.input)?;
    let (p, q) = ranks(&args.solve, &ds)?;
    let cfg = config(&args.solve);
    let name = match args.param {
        SweepParam::Alpha => "alpha",
        SweepParam::Beta => "beta",
    };
    create_dir(&args.out)?;
    let summary_path = args.out.join(SUMMARY_FILE);
    let csv_err = |e| IoError::Csv {
        path: summary_path.clone(),
        source: e,
    };
    let mut summary = csv::Writer::from_path(&summary_path).map_err(csv_err)?;
    for &value in &args.values {
        let hp = match args.param {
            SweepParam::Alpha => Hyperparams::new(value, args.fixed, p, q),
            SweepParam::Beta => Hyperparams::new(args.fixed, value, p, q),
        };
        let (record, error) = run_once(&ds, hp, cfg.clone())?;
        let stem = format!("{name}_{value}");
        write_trace_csv(args.out.join(format!("trace_{stem}.csv")), &record.trace, args.solve.timing)?;
        record.write(args.out.join(format!("run_{stem}.json")))?;
        if let Some(e) = &error {
            eprintln!("warning: {name} = {value}: {e}");
        }
        summary
            .serialize(SummaryRow {
                param: name,
                value,
                algorithm: cfg.algorithm,
                iterations: record.trace.iterations(),
                final_objective: record.trace.final_objective(),
                violations: record.violations,
                total_inner: record.trace.total_inner(),
                status: if error.is_some() { "inner_loop_exhausted" } else { "ok" },
            })
            .map_err(csv_err)?;
    }
    summary.flush().map_err(|e| IoError::file(&summary_path, e))?;
    Ok(())
}
