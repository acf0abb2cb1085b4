//! Experiment harness for the `aimr` solver library.
//!
//! The binary drives solver studies from a JSON configuration: single solves
//! with iteration traces, solver-grid comparisons aggregated into one CSV,
//! greedy rank sweeps, and dense oracle audits. Runs are reproducible from
//! the configuration alone; every artifact carries the configuration hash,
//! and reruns produce bit-identical tables apart from wall-clock columns.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure or a
//! failed audit, 4 a size guard refused a dense computation, 1 anything
//! else.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{ExperimentConfig, NormKind, SolverKind, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(
    name = "aimr",
    version,
    about = "Low-rank tensor solver experiments: solves, comparisons, sweeps, audits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a benchmark problem descriptor and its assembled system.
    MakeProblem(MakeProblemArgs),
    /// Run one grid cell and record its iteration trace.
    Solve(RunArgs),
    /// Run the full solver grid and aggregate a long-format CSV.
    Compare(RunArgs),
    /// Sweep the greedy solver over the δ and rank grids.
    Sweep(RunArgs),
    /// Cross-check solver identities against dense oracles.
    Audit(RunArgs),
}

/// Benchmark family selector of `make-problem`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemFamily {
    Rad2d,
    HighDim,
}

#[derive(Args, Debug, Clone)]
pub struct MakeProblemArgs {
    /// Benchmark family.
    #[arg(long, value_enum)]
    pub family: ProblemFamily,
    /// Mesh subdivisions per side of the unit square.
    #[arg(long, default_value_t = 10)]
    pub mesh_n: usize,
    /// Number of coefficient modes (high-dim family).
    #[arg(long, default_value_t = 4)]
    pub modes: usize,
    /// Stochastic polynomial degree (high-dim family).
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    /// Override the advection magnitude.
    #[arg(long)]
    pub advection_max: Option<f64>,
    /// Attach the weighted solution metric.
    #[arg(long)]
    pub weighted: bool,
    /// Write only the descriptor, skipping the assembled system files.
    #[arg(long)]
    pub descriptor_only: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Shared flags of the experiment subcommands: the configuration file plus
/// overrides that narrow or redirect the run. Overrides are applied before
/// the configuration hash is computed.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the solver grid with one solver.
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    /// Replace the δ grid with one value.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Replace the rank grid with one value.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Replace the norm grid with one selection.
    #[arg(long, value_enum)]
    pub norm: Option<NormKind>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the iteration budget.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Override the ideal-reference step size.
    #[arg(long)]
    pub step: Option<f64>,
    /// Run the full-scale variant of the configured problem.
    #[arg(long)]
    pub paper_scale: bool,
    /// Skip reference solves and the exact error columns.
    #[arg(long)]
    pub no_exact_errors: bool,
}

impl RunArgs {
    /// Baseline arguments pointing at a configuration file, with no
    /// overrides set.
    pub fn for_config(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            solver: None,
            delta: None,
            rank: None,
            norm: None,
            seed: None,
            out: None,
            max_iters: None,
            step: None,
            paper_scale: false,
            no_exact_errors: false,
        }
    }
}

/// One or more oracle audit checks measured a violated identity.
#[derive(Debug)]
pub struct AuditFailed(pub usize);

impl fmt::Display for AuditFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "audit failed: {} check(s) violated", self.0)
    }
}

impl std::error::Error for AuditFailed {}

pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::MakeProblem(a) => commands::make_problem(a),
        Command::Solve(a) => commands::solve(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Audit(a) => commands::audit(a),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            let (kind, code) = classify(&err);
            let payload = serde_json::json!({
                "error": { "kind": kind, "exit": code, "message": format!("{err:#}") }
            });
            eprintln!("{payload}");
            code
        }
    }
}

/// Maps an error to its machine-readable kind and process exit code.
pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    if let Some(e) = err.downcast_ref::<aimr::Error>() {
        return match e {
            aimr::Error::GuardExceeded { .. } => ("guard", 4),
            aimr::Error::NumericalBreakdown(_) | aimr::Error::NotSpd(_) => ("numerical", 3),
            aimr::Error::InvalidConfig(_)
            | aimr::Error::ShapeMismatch(_)
            | aimr::Error::OrderMismatch { .. }
            | aimr::Error::Json(_) => ("config", 2),
            aimr::Error::Io(_) => ("io", 1),
        };
    }
    if err.downcast_ref::<config::ConfigError>().is_some() {
        return ("config", 2);
    }
    if err.downcast_ref::<AuditFailed>().is_some() {
        return ("numerical", 3);
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return ("io", 1);
    }
    ("internal", 1)
}
