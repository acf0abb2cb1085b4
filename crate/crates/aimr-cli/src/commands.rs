//! Subcommand implementations: problem generation, single solves, solver
//! grids, greedy sweeps, and dense oracle audits.
//!
//! Every run loads an [`ExperimentConfig`], applies flag overrides, hashes
//! the effective configuration, and writes artifacts under the resolved
//! output directory with the manifest last. Grid cells execute in a worker
//! pool and write their files atomically, so an interrupted run leaves only
//! complete artifacts behind.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use aimr::greedy::{
    greedy_identities_audit, weak_greedy_solve, GreedyConfig, GreedyDiagnostics, GreedySchedule,
};
use aimr::io;
use aimr::operator::DualMetric;
use aimr::oracle::{DenseOracle, ORACLE_GUARD};
use aimr::problems::reference::{reference_solve, FLAT_GUARD};
use aimr::problems::{LinearProblem, ProblemSpec, QoiFunctional, WeightSpec};
use aimr::residual::LambdaConfig;
use aimr::solver::{
    cmr_solve, fit_linear_rate, gradient_solve, tau_bounds, CmrMode, IterationRecord, LambdaMode,
    SolveOutcome, SolverConfig,
};
use aimr::tensor::{svd2d_project, CanonicalTensor, FormatSpec, RankOneMetric};

use crate::artifacts::{self, fmt_opt, Manifest};
use crate::config::{
    grid, Cell, ConfigError, ExperimentConfig, NormKind, SolverKind, OUTPUT_ROOT_ENV,
};
use crate::{AuditFailed, MakeProblemArgs, ProblemFamily, RunArgs};

// ── run preparation ──────────────────────────────────────────────────────

/// Effective configuration of one run: overrides applied, hash frozen,
/// problem descriptor loaded and scaled.
struct Workspace {
    cfg: ExperimentConfig,
    hash: String,
    short: String,
    out: PathBuf,
    spec: ProblemSpec,
    started: Instant,
}

fn prepare(args: &RunArgs) -> Result<Workspace> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.solver {
        cfg.solvers = vec![s];
    }
    if let Some(d) = args.delta {
        cfg.deltas = vec![d];
    }
    if let Some(r) = args.rank {
        cfg.ranks = vec![r];
    }
    if let Some(n) = args.norm {
        cfg.norms = vec![n];
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(m) = args.max_iters {
        cfg.max_iters = m;
    }
    if let Some(s) = args.step {
        cfg.step = s;
    }
    if args.paper_scale {
        cfg.paper_scale = true;
    }
    if args.no_exact_errors {
        cfg.exact_errors = false;
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let short = cfg.short_hash();
    let config_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let spec = cfg
        .problem
        .load(&config_dir)
        .map_err(|e| ConfigError(format!("loading problem descriptor: {e}")))?;
    let spec = scaled(&spec, cfg.paper_scale);
    let out = cfg.resolved_output_dir();
    std::fs::create_dir_all(&out)?;
    Ok(Workspace {
        cfg,
        hash,
        short,
        out,
        spec,
        started: Instant::now(),
    })
}

/// The full-scale variant refines the mesh; everything else is unchanged.
fn scaled(spec: &ProblemSpec, paper_scale: bool) -> ProblemSpec {
    let mut s = spec.clone();
    if paper_scale {
        match &mut s {
            ProblemSpec::Rad2d { mesh_n, .. } => *mesh_n = 40,
            ProblemSpec::HighDim { mesh_n, .. } => *mesh_n = 32,
        }
    }
    s
}

/// The canonical norm strips any weight; the weighted norm attaches the
/// default weight unless the descriptor already carries one.
fn spec_for_norm(base: &ProblemSpec, norm: NormKind) -> ProblemSpec {
    let mut s = base.clone();
    let (ProblemSpec::Rad2d { weight, .. } | ProblemSpec::HighDim { weight, .. }) = &mut s;
    match norm {
        NormKind::Canonical => *weight = None,
        NormKind::Weighted => {
            if weight.is_none() {
                *weight = Some(WeightSpec::default());
            }
        }
    }
    s
}

/// Assembled problem and its residual metric for one norm selection.
struct NormCtx {
    norm: NormKind,
    problem: LinearProblem,
    dual: DualMetric,
}

fn build_norm_ctx(spec: &ProblemSpec, norm: NormKind) -> Result<NormCtx> {
    let problem = spec_for_norm(spec, norm).build()?;
    let dual = problem.dual()?;
    Ok(NormCtx {
        norm,
        problem,
        dual,
    })
}

fn norm_ctxs(spec: &ProblemSpec, norms: &[NormKind]) -> Result<Vec<NormCtx>> {
    let mut out: Vec<NormCtx> = Vec::new();
    for &n in norms {
        if out.iter().all(|c| c.norm != n) {
            out.push(build_norm_ctx(spec, n)?);
        }
    }
    Ok(out)
}

fn ctx_for(ctxs: &[NormCtx], norm: NormKind) -> &NormCtx {
    ctxs.iter()
        .find(|c| c.norm == norm)
        .expect("a context is built for every norm in the grid")
}

// ── exact reference errors ───────────────────────────────────────────────

/// Reference data shared by every cell: the flat direct solve, its QoI
/// statistics, and the weighted metric for the second error column. Only
/// order-2 problems within the flat solve guard get one.
struct ExactCtx {
    u_ref: DVector<f64>,
    qoi_mean: f64,
    qoi_var: f64,
    weighted_rx: Arc<RankOneMetric>,
}

fn exact_ctx(spec: &ProblemSpec, any: &LinearProblem, enabled: bool) -> Result<Option<ExactCtx>> {
    let dims = any.dims();
    if !enabled || dims.len() != 2 || dims.iter().product::<usize>() > FLAT_GUARD {
        return Ok(None);
    }
    let reference = reference_solve(any)?;
    let ref_tensor = flat_to_tensor(&reference.u, &dims)?;
    let (qoi_mean, qoi_var) = any.qoi.stats(&ref_tensor)?;
    let weighted_rx = spec_for_norm(spec, NormKind::Weighted).build()?.rx;
    Ok(Some(ExactCtx {
        u_ref: reference.u,
        qoi_mean,
        qoi_var,
        weighted_rx,
    }))
}

/// Canonical form of a flat order-2 vector: the row-major reshape paired
/// with an identity factor.
fn flat_to_tensor(u: &DVector<f64>, dims: &[usize]) -> Result<CanonicalTensor> {
    let (n0, n1) = (dims[0], dims[1]);
    let m = DMatrix::from_fn(n0, n1, |i, j| u[i * n1 + j]);
    Ok(CanonicalTensor::from_factors(vec![
        m,
        DMatrix::identity(n1, n1),
    ])?)
}

/// Norm of a flat order-2 vector under a rank-one metric: with `V` the
/// row-major reshape, the squared norm is `tr(Vᵀ G₀ V G₁)`.
fn flat_norm(v: &DVector<f64>, dims: &[usize], rx: &RankOneMetric) -> f64 {
    let (n0, n1) = (dims[0], dims[1]);
    let m = DMatrix::from_fn(n0, n1, |i, j| v[i * n1 + j]);
    let left = rx.gram(0).apply(&m);
    let full = rx.gram(1).apply(&left.transpose()).transpose();
    m.iter()
        .zip(full.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

struct CellErrors {
    err_x_canonical: f64,
    err_x_weighted: f64,
    qoi_mean_err: f64,
    qoi_var_err: f64,
}

fn cell_errors(u: &CanonicalTensor, qoi: &QoiFunctional, ex: &ExactCtx) -> Result<CellErrors> {
    let flat = DVector::from_vec(u.to_dense()?);
    let diff = &flat - &ex.u_ref;
    let dims = u.dims();
    let (mean, var) = qoi.stats(u)?;
    Ok(CellErrors {
        err_x_canonical: diff.norm(),
        err_x_weighted: flat_norm(&diff, &dims, &ex.weighted_rx),
        qoi_mean_err: (mean - ex.qoi_mean).abs(),
        qoi_var_err: (var - ex.qoi_var).abs(),
    })
}

// ── cell execution ───────────────────────────────────────────────────────

fn lambda_config(delta: f64, seed: u64) -> LambdaConfig {
    LambdaConfig {
        delta,
        seed,
        ..LambdaConfig::default()
    }
}

fn projection_for(order: usize, rank: usize) -> FormatSpec {
    if order == 2 {
        FormatSpec::svd2d(rank)
    } else {
        FormatSpec::als(rank)
    }
}

fn gradient_config(
    rank: usize,
    seed: u64,
    max_iters: usize,
    order: usize,
    lambda: LambdaMode,
    step: f64,
) -> SolverConfig {
    SolverConfig {
        lambda,
        max_iters,
        projection: Some(projection_for(order, rank)),
        step,
        projection_seed: seed,
        ..SolverConfig::default()
    }
}

/// Kebab-case name of a serde-tagged status enum.
fn kebab<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "unknown".into(),
    }
}

/// Everything a solver run produces; the per-solver artifact writers pick
/// the pieces they need.
struct CellOutput {
    u: CanonicalTensor,
    status: String,
    est_err: Option<f64>,
    rate_obs: Option<f64>,
    trace: Option<Vec<IterationRecord>>,
    greedy: Option<GreedyDiagnostics>,
    objective: Option<Vec<f64>>,
    warnings: Vec<String>,
}

fn from_gradient(out: SolveOutcome) -> CellOutput {
    let eps: Vec<f64> = out.trace.iter().map(|r| r.eps_hat).collect();
    CellOutput {
        status: kebab(&out.status),
        est_err: out.final_estimate(),
        rate_obs: fit_linear_rate(&eps, 10.0),
        u: out.u,
        trace: Some(out.trace),
        greedy: None,
        objective: None,
        warnings: out.warnings,
    }
}

fn run_cell_solver(cell: &Cell, ctx: &NormCtx, cfg: &ExperimentConfig) -> Result<CellOutput> {
    let seed = cell.seed(cfg.master_seed);
    let order = ctx.problem.dims().len();
    match cell.solver {
        SolverKind::AimrDirect => {
            let lambda = LambdaMode::Greedy {
                config: lambda_config(cell.delta, seed),
            };
            let scfg = gradient_config(cell.rank, seed, cfg.max_iters, order, lambda, 1.0);
            Ok(from_gradient(gradient_solve(
                &ctx.dual,
                &ctx.problem.b,
                &scfg,
                None,
            )?))
        }
        SolverKind::IdealReference => {
            let oracle = DenseOracle::new(&ctx.problem.a, &ctx.problem.rx)?;
            let scfg = gradient_config(
                cell.rank,
                seed,
                cfg.max_iters,
                order,
                LambdaMode::DenseExact,
                cfg.step,
            );
            Ok(from_gradient(gradient_solve(
                &ctx.dual,
                &ctx.problem.b,
                &scfg,
                Some(&oracle),
            )?))
        }
        SolverKind::AimrGreedy => {
            // the sufficient-progress condition is diagnostic: let the loop
            // reach its rank budget and leave the verdict in the rows
            let sched = GreedySchedule {
                condition_patience: cell.rank,
                ..GreedySchedule::constant(cell.rank, cell.delta)
            };
            let inner = SolverConfig {
                lambda: LambdaMode::Greedy {
                    config: lambda_config(cell.delta, seed),
                },
                max_iters: cfg.max_iters,
                stagnation_window: 4,
                projection_seed: seed,
                ..SolverConfig::default()
            };
            let gcfg = GreedyConfig {
                inner,
                seed,
                keep_corrections: false,
            };
            let (u, diag) = weak_greedy_solve(&ctx.dual, &ctx.problem.b, &sched, &gcfg, None)?;
            Ok(CellOutput {
                u,
                status: kebab(&diag.status),
                est_err: Some(diag.final_estimate),
                rate_obs: None,
                trace: None,
                greedy: Some(diag),
                objective: None,
                warnings: Vec::new(),
            })
        }
        SolverKind::CmrDirect | SolverKind::CmrGreedy => {
            let mode = match cell.solver {
                SolverKind::CmrDirect => CmrMode::Als,
                _ => CmrMode::Greedy,
            };
            let out = cmr_solve(&ctx.problem.a, &ctx.problem.b, cell.rank, mode, seed, None)?;
            Ok(CellOutput {
                u: out.u,
                status: "completed".into(),
                est_err: Some(out.residual_norm),
                rate_obs: None,
                trace: None,
                greedy: None,
                objective: Some(out.objective_history),
                warnings: Vec::new(),
            })
        }
    }
}

/// One row of the long-format results table.
#[derive(Serialize)]
struct CellReport {
    config_hash: String,
    solver: String,
    delta: f64,
    norm: String,
    rank: usize,
    seed: u64,
    status: String,
    est_err: Option<f64>,
    rate_obs: Option<f64>,
    gamma_tilde: Option<f64>,
    #[serde(rename = "err_X_canonical")]
    err_x_canonical: Option<f64>,
    #[serde(rename = "err_X_weighted")]
    err_x_weighted: Option<f64>,
    qoi_mean_err: Option<f64>,
    qoi_var_err: Option<f64>,
    warnings: Vec<String>,
}

const COMPARE_HEADER: &[&str] = &[
    "config_hash",
    "solver",
    "delta",
    "norm",
    "rank",
    "seed",
    "status",
    "est_err",
    "err_X_canonical",
    "err_X_weighted",
    "qoi_mean_err",
    "qoi_var_err",
];

fn compare_csv_row(r: &CellReport) -> Vec<String> {
    vec![
        r.config_hash.clone(),
        r.solver.clone(),
        artifacts::fmt_f(r.delta),
        r.norm.clone(),
        r.rank.to_string(),
        r.seed.to_string(),
        r.status.clone(),
        fmt_opt(r.est_err),
        fmt_opt(r.err_x_canonical),
        fmt_opt(r.err_x_weighted),
        fmt_opt(r.qoi_mean_err),
        fmt_opt(r.qoi_var_err),
    ]
}

fn run_cell(
    cell: &Cell,
    ws: &Workspace,
    ctxs: &[NormCtx],
    ex: Option<&ExactCtx>,
) -> Result<(CellReport, CellOutput)> {
    let ctx = ctx_for(ctxs, cell.norm);
    let output = run_cell_solver(cell, ctx, &ws.cfg)?;
    let errors = match ex {
        Some(e) => Some(cell_errors(&output.u, &ctx.problem.qoi, e)?),
        None => None,
    };
    let report = CellReport {
        config_hash: ws.short.clone(),
        solver: cell.solver.to_string(),
        delta: cell.delta,
        norm: cell.norm.to_string(),
        rank: cell.rank,
        seed: cell.seed(ws.cfg.master_seed),
        status: output.status.clone(),
        est_err: output.est_err,
        rate_obs: output.rate_obs,
        gamma_tilde: None,
        err_x_canonical: errors.as_ref().map(|e| e.err_x_canonical),
        err_x_weighted: errors.as_ref().map(|e| e.err_x_weighted),
        qoi_mean_err: errors.as_ref().map(|e| e.qoi_mean_err),
        qoi_var_err: errors.as_ref().map(|e| e.qoi_var_err),
        warnings: output.warnings.clone(),
    };
    Ok((report, output))
}

fn finish(ws: &Workspace, command: &str, files: Vec<String>) -> Result<()> {
    Manifest::new(
        command,
        &ws.cfg,
        &ws.hash,
        ws.cfg.master_seed,
        ws.started.elapsed().as_secs_f64(),
        files,
    )?
    .write(&ws.out)
}

// ── subcommands ──────────────────────────────────────────────────────────

pub fn make_problem(args: &MakeProblemArgs) -> Result<()> {
    let mut spec = match args.family {
        ProblemFamily::Rad2d => ProblemSpec::rad2d(args.mesh_n),
        ProblemFamily::HighDim => ProblemSpec::high_dim(args.mesh_n, args.modes, args.degree),
    };
    if let Some(adv) = args.advection_max {
        let (ProblemSpec::Rad2d { advection_max, .. }
        | ProblemSpec::HighDim { advection_max, .. }) = &mut spec;
        *advection_max = adv;
    }
    if args.weighted {
        spec = spec.with_weight(WeightSpec::default());
    }

    let out = match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if args.out.is_relative() => PathBuf::from(root).join(&args.out),
        _ => args.out.clone(),
    };
    std::fs::create_dir_all(&out)?;
    io::write_problem(&out.join("problem.json"), &spec)?;

    let problem = spec.build()?;
    if !args.descriptor_only {
        io::write_operator(&out.join("operator.json"), &problem.a)?;
        io::write_tensor(&out.join("rhs.json"), &problem.b)?;
        io::write_metric(&out.join("metric.json"), &problem.rx)?;
    }
    println!(
        "make-problem: dims {:?}, {} operator terms -> {}",
        problem.dims(),
        problem.a.num_terms(),
        out.display()
    );
    Ok(())
}

pub fn solve(args: &RunArgs) -> Result<()> {
    let ws = prepare(args)?;
    let cells = grid(&ws.cfg);
    if cells.len() != 1 {
        return Err(ConfigError(format!(
            "solve expects exactly one grid cell, found {}; narrow with --solver/--delta/--rank/--norm or run compare",
            cells.len()
        ))
        .into());
    }
    let cell = cells[0];
    let ctxs = norm_ctxs(&ws.spec, &ws.cfg.norms)?;
    let ex = exact_ctx(&ws.spec, &ctxs[0].problem, ws.cfg.exact_errors)?;
    let (mut report, output) = run_cell(&cell, &ws, &ctxs, ex.as_ref())?;
    let ctx = ctx_for(&ctxs, cell.norm);

    io::write_tensor(&ws.out.join("solution.json"), &output.u)?;
    let mut files = vec!["solution.json".to_string(), "result.json".to_string()];

    if let Some(trace) = &output.trace {
        if let Some(e) = ex.as_ref() {
            report.gamma_tilde = gamma_tilde(&output.u, cell.rank, ctx, e)?;
        }
        artifacts::write_trace_csv(&ws.out.join("trace.csv"), trace)?;
        artifacts::save_json_atomic(
            &ws.out.join("trace.json"),
            &TraceFile {
                format: "iteration-trace",
                version: 1,
                config_hash: ws.short.clone(),
                records: trace.clone(),
                summary: TraceSummary {
                    status: report.status.clone(),
                    rate_obs: report.rate_obs,
                    final_estimate: report.est_err,
                    gamma_tilde: report.gamma_tilde,
                    warnings: output.warnings.clone(),
                },
            },
        )?;
        files.push("trace.csv".into());
        files.push("trace.json".into());
    }
    if let Some(diag) = &output.greedy {
        artifacts::write_greedy_csv(&ws.out.join("greedy.csv"), &diag.rows)?;
        files.push("greedy.csv".into());
    }
    if let Some(history) = &output.objective {
        artifacts::write_objective_csv(&ws.out.join("objective.csv"), history)?;
        files.push("objective.csv".into());
    }
    artifacts::save_json_atomic(&ws.out.join("result.json"), &report)?;
    finish(&ws, "solve", files)?;
    println!(
        "solve: {} status {} est_err {} -> {}",
        cell.id(),
        report.status,
        fmt_opt(report.est_err),
        ws.out.display()
    );
    Ok(())
}

/// Final error of the iterate relative to the metric-best rank-`r`
/// truncation of the reference, minus one.
fn gamma_tilde(
    u: &CanonicalTensor,
    rank: usize,
    ctx: &NormCtx,
    ex: &ExactCtx,
) -> Result<Option<f64>> {
    let dims = ctx.problem.dims();
    if dims.len() != 2 {
        return Ok(None);
    }
    let reference = flat_to_tensor(&ex.u_ref, &dims)?;
    let best = svd2d_project(&reference, rank, &ctx.problem.rx)?;
    let best_flat = DVector::from_vec(best.to_dense()?);
    let best_err = flat_norm(&(&best_flat - &ex.u_ref), &dims, &ctx.problem.rx);
    if best_err == 0.0 {
        return Ok(None);
    }
    let u_flat = DVector::from_vec(u.to_dense()?);
    let u_err = flat_norm(&(&u_flat - &ex.u_ref), &dims, &ctx.problem.rx);
    Ok(Some(u_err / best_err - 1.0))
}

#[derive(Serialize)]
struct TraceSummary {
    status: String,
    rate_obs: Option<f64>,
    final_estimate: Option<f64>,
    gamma_tilde: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct TraceFile {
    format: &'static str,
    version: u32,
    config_hash: String,
    records: Vec<IterationRecord>,
    summary: TraceSummary,
}

pub fn compare(args: &RunArgs) -> Result<()> {
    let ws = prepare(args)?;
    let cells = grid(&ws.cfg);
    let ctxs = norm_ctxs(&ws.spec, &ws.cfg.norms)?;
    let ex = exact_ctx(&ws.spec, &ctxs[0].problem, ws.cfg.exact_errors)?;
    let cell_dir = ws.out.join("cells");
    std::fs::create_dir_all(&cell_dir)?;

    let mut results: Vec<(Cell, CellReport)> = cells
        .par_iter()
        .map(|cell| {
            let (report, _) = run_cell(cell, &ws, &ctxs, ex.as_ref())?;
            artifacts::save_json_atomic(&cell_dir.join(format!("{}.json", cell.id())), &report)?;
            Ok((*cell, report))
        })
        .collect::<Result<Vec<_>>>()?;

    // deterministic row order regardless of worker scheduling
    results.sort_by(|(a, _), (b, _)| {
        a.solver
            .to_string()
            .cmp(&b.solver.to_string())
            .then(a.delta.total_cmp(&b.delta))
            .then(a.rank.cmp(&b.rank))
            .then(a.norm.to_string().cmp(&b.norm.to_string()))
    });

    let rows: Vec<Vec<String>> = results.iter().map(|(_, r)| compare_csv_row(r)).collect();
    artifacts::write_csv(&ws.out.join("compare.csv"), COMPARE_HEADER, &rows)?;

    let mut files = vec!["compare.csv".to_string()];
    files.extend(results.iter().map(|(c, _)| format!("cells/{}.json", c.id())));
    finish(&ws, "compare", files)?;
    println!(
        "compare: {} cells -> {}",
        results.len(),
        ws.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepEntry {
    delta: f64,
    rank: usize,
    norm: String,
    seed: u64,
    status: String,
    initial_estimate: f64,
    final_estimate: f64,
    accepted: usize,
    rows_csv: String,
}

#[derive(Serialize)]
struct SweepFile {
    format: &'static str,
    version: u32,
    config_hash: String,
    epsilon: f64,
    stop_tol: f64,
    entries: Vec<SweepEntry>,
}

/// δ × rank × norm sweep of the greedy solver; the configured solver grid
/// is ignored because the sweep is the greedy study by definition.
pub fn sweep(args: &RunArgs) -> Result<()> {
    let ws = prepare(args)?;
    let mut cells = Vec::new();
    for &delta in &ws.cfg.deltas {
        for &rank in &ws.cfg.ranks {
            for &norm in &ws.cfg.norms {
                cells.push(Cell {
                    solver: SolverKind::AimrGreedy,
                    delta,
                    rank,
                    norm,
                });
            }
        }
    }
    let ctxs = norm_ctxs(&ws.spec, &ws.cfg.norms)?;

    let mut entries: Vec<SweepEntry> = cells
        .par_iter()
        .map(|cell| {
            let ctx = ctx_for(&ctxs, cell.norm);
            let output = run_cell_solver(cell, ctx, &ws.cfg)?;
            let diag = output.greedy.expect("the greedy solver returns diagnostics");
            let file = format!("greedy-{}.csv", cell.id());
            artifacts::write_greedy_csv(&ws.out.join(&file), &diag.rows)?;
            Ok(SweepEntry {
                delta: cell.delta,
                rank: cell.rank,
                norm: cell.norm.to_string(),
                seed: cell.seed(ws.cfg.master_seed),
                status: kebab(&diag.status),
                initial_estimate: diag.initial_estimate,
                final_estimate: diag.final_estimate,
                accepted: diag.rows.iter().filter(|r| r.accepted).count(),
                rows_csv: file,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then(a.rank.cmp(&b.rank))
            .then(a.norm.cmp(&b.norm))
    });

    let sample = GreedySchedule::constant(1, ws.cfg.deltas[0]);
    let mut files: Vec<String> = entries.iter().map(|e| e.rows_csv.clone()).collect();
    files.push("sweep.json".into());
    artifacts::save_json_atomic(
        &ws.out.join("sweep.json"),
        &SweepFile {
            format: "greedy-sweep",
            version: 1,
            config_hash: ws.short.clone(),
            epsilon: sample.epsilon,
            stop_tol: sample.stop_tol,
            entries,
        },
    )?;
    finish(&ws, "sweep", files)?;
    println!("sweep: {} cells -> {}", cells.len(), ws.out.display());
    Ok(())
}

// ── audit ────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct AuditCheck {
    name: &'static str,
    norm: String,
    ran: bool,
    ok: bool,
    measured: Option<f64>,
    bound: Option<f64>,
    detail: String,
}

impl AuditCheck {
    fn ran(name: &'static str, norm: &str, measured: f64, bound: f64) -> Self {
        Self {
            name,
            norm: norm.into(),
            ran: true,
            ok: measured <= bound,
            measured: Some(measured),
            bound: Some(bound),
            detail: format!("measured {measured:.3e}, bound {bound:.3e}"),
        }
    }

    fn skipped(name: &'static str, norm: &str, why: &str) -> Self {
        Self {
            name,
            norm: norm.into(),
            ran: false,
            ok: true,
            measured: None,
            bound: None,
            detail: why.into(),
        }
    }
}

#[derive(Serialize)]
struct AuditFile {
    format: &'static str,
    version: u32,
    config_hash: String,
    ok: bool,
    checks: Vec<AuditCheck>,
}

/// Dense oracle cross-checks of the solver stack on the configured problem:
/// reference solve residual, metric isometry, estimator effectivity bounds,
/// greedy step identities (order 2), and factored-vs-dense operator apply
/// (higher orders).
pub fn audit(args: &RunArgs) -> Result<()> {
    let ws = prepare(args)?;
    let mut checks = Vec::new();
    for &norm in &ws.cfg.norms {
        if checks.iter().any(|c: &AuditCheck| c.norm == norm.to_string()) {
            continue;
        }
        let ctx = build_norm_ctx(&ws.spec, norm)?;
        checks.extend(audit_norm(&ws, &ctx)?);
    }
    let failed = checks.iter().filter(|c| c.ran && !c.ok).count();
    for c in &checks {
        let verdict = if !c.ran {
            "SKIP"
        } else if c.ok {
            "PASS"
        } else {
            "FAIL"
        };
        println!("audit: {verdict}: {} [{}]: {}", c.name, c.norm, c.detail);
    }
    artifacts::save_json_atomic(
        &ws.out.join("audit.json"),
        &AuditFile {
            format: "audit-report",
            version: 1,
            config_hash: ws.short.clone(),
            ok: failed == 0,
            checks,
        },
    )?;
    finish(&ws, "audit", vec!["audit.json".into()])?;
    if failed > 0 {
        return Err(AuditFailed(failed).into());
    }
    Ok(())
}

fn audit_norm(ws: &Workspace, ctx: &NormCtx) -> Result<Vec<AuditCheck>> {
    let norm = ctx.norm.to_string();
    let dims = ctx.problem.dims();
    let order = dims.len();
    let total: usize = dims.iter().product();
    let mut checks = Vec::new();

    if order == 2 && total <= FLAT_GUARD {
        let r = reference_solve(&ctx.problem)?;
        checks.push(AuditCheck::ran(
            "reference-residual",
            &norm,
            r.relative_residual,
            1e-10,
        ));
    } else {
        checks.push(AuditCheck::skipped(
            "reference-residual",
            &norm,
            "needs an order-2 problem within the flat solve guard",
        ));
    }

    if total > ORACLE_GUARD {
        for name in ["isometry", "estimator-bounds", "greedy-identities"] {
            checks.push(AuditCheck::skipped(
                name,
                &norm,
                "problem exceeds the dense oracle guard",
            ));
        }
        return Ok(checks);
    }
    let oracle = DenseOracle::new(&ctx.problem.a, &ctx.problem.rx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ws.cfg.master_seed);
    let zero = CanonicalTensor::zeros(&dims);

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let v = CanonicalTensor::random(&dims, 3, &mut rng);
        let lifted = oracle.lift(&oracle.residual_functional(&v, &zero)?);
        let vx = oracle.x_norm(&oracle.flatten(&v)?);
        worst = worst.max((oracle.y_norm(&lifted) / vx - 1.0).abs());
    }
    checks.push(AuditCheck::ran("isometry", &norm, worst, 1e-8));

    let delta = 0.2;
    let scfg = SolverConfig {
        lambda: LambdaMode::DenseTruncated {
            delta,
            seed: ws.cfg.master_seed.wrapping_add(1),
        },
        max_iters: 8,
        projection: Some(projection_for(order, 5)),
        stagnation_window: 4,
        projection_seed: ws.cfg.master_seed,
        ..SolverConfig::default()
    };
    let out = gradient_solve(&ctx.dual, &ctx.problem.b, &scfg, Some(&oracle))?;
    let (lo, hi) = tau_bounds(delta);
    let mut violation = 0.0f64;
    for r in &out.trace {
        if let Some(tau) = r.tau_hat {
            violation = violation.max(lo - tau).max(tau - hi);
        }
    }
    checks.push(AuditCheck::ran("estimator-bounds", &norm, violation, 1e-9));

    if order == 2 {
        // decreasing lift accuracies keep the quasi-optimality gates active
        // as the per-step ratios climb
        let sched = GreedySchedule {
            delta: vec![0.2, 0.2, 0.1, 0.05, 0.05],
            stop_tol: 0.0,
            condition_patience: 5,
            ..GreedySchedule::constant(5, delta)
        };
        let inner = SolverConfig {
            lambda: LambdaMode::DenseTruncated {
                delta,
                seed: ws.cfg.master_seed.wrapping_add(2),
            },
            max_iters: 10,
            stagnation_window: 4,
            ..SolverConfig::default()
        };
        let gcfg = GreedyConfig {
            inner,
            seed: ws.cfg.master_seed,
            keep_corrections: true,
        };
        let (_, diag) = weak_greedy_solve(&ctx.dual, &ctx.problem.b, &sched, &gcfg, Some(&oracle))?;
        let u_ref = oracle.reference(&ctx.problem.b)?;
        let report = greedy_identities_audit(&oracle, &ctx.problem.rx, &u_ref, &diag, 1e-9)?;
        let mut check =
            AuditCheck::ran("greedy-identities", &norm, report.telescoping_rel_err, 1e-9);
        check.ok = report.ok;
        if !report.ok {
            check.detail = report.failures.join("; ");
        }
        checks.push(check);
    } else {
        let v = CanonicalTensor::random(&dims, 2, &mut rng);
        let factored = oracle.flatten(&ctx.problem.a.apply(&v)?)?;
        let dense = oracle.residual_functional(&v, &zero)?;
        let rel = (&factored - &dense).norm() / dense.norm().max(f64::MIN_POSITIVE);
        checks.push(AuditCheck::ran("apply-consistency", &norm, rel, 1e-10));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aimr::tensor::Gram;
    use rand::SeedableRng;

    #[test]
    fn norm_selection_strips_and_attaches_weights() {
        let base = ProblemSpec::rad2d(5).with_weight(WeightSpec {
            w0: 7.0,
            ..WeightSpec::default()
        });
        let canonical = spec_for_norm(&base, NormKind::Canonical);
        assert!(canonical.weight().is_none());
        let weighted = spec_for_norm(&base, NormKind::Weighted);
        assert_eq!(weighted.weight().unwrap().w0, 7.0);

        let bare = ProblemSpec::rad2d(5);
        let weighted = spec_for_norm(&bare, NormKind::Weighted);
        assert_eq!(weighted.weight().unwrap().w0, WeightSpec::default().w0);
    }

    #[test]
    fn paper_scale_refines_the_mesh() {
        let spec = scaled(&ProblemSpec::rad2d(10), true);
        match spec {
            ProblemSpec::Rad2d { mesh_n, .. } => assert_eq!(mesh_n, 40),
            other => panic!("family changed: {other:?}"),
        }
        let same = scaled(&ProblemSpec::rad2d(10), false);
        assert_eq!(same, ProblemSpec::rad2d(10));
    }

    #[test]
    fn flat_norm_agrees_with_the_metric_norm() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = CanonicalTensor::random(&[4, 3], 2, &mut rng);
        let rx = RankOneMetric::new(vec![
            Gram::Diagonal(nalgebra::DVector::from_vec(vec![0.5, 2.0, 1.5, 3.0])),
            Gram::Identity(3),
        ])
        .unwrap();
        let flat = DVector::from_vec(t.to_dense().unwrap());
        let direct = t.norm(&rx).unwrap();
        let via_flat = flat_norm(&flat, &[4, 3], &rx);
        assert!((direct - via_flat).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn flat_tensor_round_trips_the_reference_vector() {
        let v = DVector::from_fn(12, |i, _| (i as f64 + 1.0) * 0.25);
        let t = flat_to_tensor(&v, &[3, 4]).unwrap();
        assert_eq!(t.to_dense().unwrap(), v.as_slice().to_vec());
    }

    #[test]
    fn status_names_are_kebab_case() {
        assert_eq!(kebab(&aimr::solver::SolveStatus::Converged), "converged");
        assert_eq!(kebab(&aimr::greedy::GreedyStatus::MaxCorrections), "max-corrections");
    }
}
