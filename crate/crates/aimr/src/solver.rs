//! The perturbed minimal-residual gradient iteration and its baselines.
//!
//! One iteration lifts the residual into the solution space through the dual
//! metric, takes a gradient step, and re-projects onto the low-rank manifold:
//! `u_{k+1} = Π(u_k − ρ R_X⁻¹ A* y_k)` with `y_k ≈ R_Y⁻¹(A u_k − b)`. When
//! the lift is exact and `ρ = 1` the iteration solves the system in a single
//! step; a lift with relative accuracy `δ` contracts the error by `δ` per
//! step until rank truncation induces stagnation. The certified lift norm
//! doubles as an error estimator: `ε̂ = ‖y‖_Y / √(1 − δ²)` bounds the true
//! error from above with effectivity below `1/√(1 − δ²)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sprs::TriMat;

use crate::operator::{metric_solve, normal_operator, DualMetric, Factor, LowRankOperator};
use crate::oracle::DenseOracle;
use crate::residual::{greedy_minimize, lambda_delta, LambdaConfig, QuadForm, ResidualProblem};
use crate::tensor::{svd2d_project, CanonicalTensor, FormatSpec, Gram, ProjectorKind, RankOneMetric};
use crate::{Error, Result};

/// How the residual lift `y_k` is produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LambdaMode {
    /// Greedy low-rank approximation with certified relative accuracy.
    Greedy { config: LambdaConfig },
    /// Dense exact lift through the oracle (the ideal iteration).
    DenseExact,
    /// Dense lift perturbed to an exactly known relative error; turns the
    /// contraction and estimator statements into sharp testable equalities.
    DenseTruncated { delta: f64, seed: u64 },
}

impl LambdaMode {
    pub fn delta(&self) -> f64 {
        match self {
            LambdaMode::Greedy { config } => config.delta,
            LambdaMode::DenseExact => 0.0,
            LambdaMode::DenseTruncated { delta, .. } => *delta,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: LambdaMode,
    pub max_iters: usize,
    /// Rank projection applied after every update; `None` lets ranks grow.
    pub projection: Option<FormatSpec>,
    /// Step size `ρ` of the gradient update.
    pub step: f64,
    /// Stop once the error estimate falls below this value.
    pub target_estimate: Option<f64>,
    /// Exit when the best estimate over this many trailing iterations fails
    /// to improve the earlier minimum by `stagnation_tol` (relative).
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    /// Exit when the estimate exceeds its running minimum by this factor.
    pub divergence_factor: f64,
    /// Warn once if the pre-projection rank passes this threshold.
    pub rank_warn: usize,
    pub projection_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::Greedy {
                config: LambdaConfig::default(),
            },
            max_iters: 50,
            projection: None,
            step: 1.0,
            target_estimate: None,
            stagnation_window: 5,
            stagnation_tol: 1e-4,
            divergence_factor: 10.0,
            rank_warn: 500,
            projection_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Estimate reached the target (or hit exact zero).
    Converged,
    /// Estimate flat over the stagnation window: rank truncation floor.
    Stagnated,
    /// Estimate blew past its running minimum.
    Diverged,
    MaxIters,
}

/// Per-iteration measurements; `true_err` and `tau_hat` appear only when an
/// oracle was supplied. `seconds` is wall-clock and not deterministic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub yk_norm: f64,
    pub eps_hat: f64,
    pub true_err: Option<f64>,
    pub tau_hat: Option<f64>,
    pub rank_u: usize,
    pub rank_y: usize,
    pub lambda_certified: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub u: CanonicalTensor,
    pub trace: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
}

impl SolveOutcome {
    pub fn final_estimate(&self) -> Option<f64> {
        self.trace.last().map(|r| r.eps_hat)
    }
}

/// Upper error estimate from the certified lift norm.
pub fn eps_hat(y_norm: f64, delta: f64) -> f64 {
    y_norm / (1.0 - delta * delta).sqrt()
}

/// Range the estimator effectivity `ε̂ / ‖u − u_k‖_X` is confined to.
pub fn tau_bounds(delta: f64) -> (f64, f64) {
    (1.0, 1.0 / (1.0 - delta * delta).sqrt())
}

/// One application of the residual lift at the iterate `u`: returns the lift
/// `y`, its rank, whether the stagnation test certified it, and `‖y‖_Y`.
/// `seed_offset` decorrelates repeated truncated lifts.
pub(crate) fn residual_lift(
    dual: &DualMetric,
    b: &CanonicalTensor,
    u: &CanonicalTensor,
    lambda: &LambdaMode,
    seed_offset: u64,
    oracle: Option<&DenseOracle>,
) -> Result<(CanonicalTensor, usize, bool, f64)> {
    match lambda {
        LambdaMode::Greedy { config } => {
            let rhs = dual.operator().apply(u)?.add(&b.scale(-1.0))?;
            let problem = ResidualProblem {
                form: QuadForm::Dual(dual),
                rhs,
            };
            let (y, report) = lambda_delta(&problem, config)?;
            Ok((y, report.rank, report.certified, report.y_norm))
        }
        LambdaMode::DenseExact => {
            let o = oracle.ok_or_else(|| {
                Error::InvalidConfig("dense lambda modes need an oracle".into())
            })?;
            let t = o.truncated_lift(u, b, 0.0, 0)?;
            let y = o.to_canonical2d(&t.y)?;
            Ok((y, t.y.len(), true, t.y_norm))
        }
        LambdaMode::DenseTruncated { delta, seed } => {
            let o = oracle.ok_or_else(|| {
                Error::InvalidConfig("dense lambda modes need an oracle".into())
            })?;
            let t = o.truncated_lift(u, b, *delta, seed.wrapping_add(seed_offset))?;
            let y = o.to_canonical2d(&t.y)?;
            Ok((y, t.y.len(), true, t.y_norm))
        }
    }
}

/// The perturbed minimal-residual gradient iteration on `A u = b`.
pub fn gradient_solve(
    dual: &DualMetric,
    b: &CanonicalTensor,
    cfg: &SolverConfig,
    oracle: Option<&DenseOracle>,
) -> Result<SolveOutcome> {
    if cfg.step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive, got {}",
            cfg.step
        )));
    }
    let a = dual.operator();
    let rx = dual.solution_metric();
    let dims = dual.dims();
    if b.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "rhs dims {:?} do not match operator dims {:?}",
            b.dims(),
            dims
        )));
    }
    let delta = cfg.lambda.delta();
    let u_ref = match oracle {
        Some(o) => Some(o.reference(b)?),
        None => None,
    };

    let mut u = CanonicalTensor::zeros(&dims);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut eps_min = f64::INFINITY;
    let mut rank_warned = false;

    for k in 0..cfg.max_iters {
        let started = Instant::now();
        let (y, rank_y, certified, y_norm) =
            residual_lift(dual, b, &u, &cfg.lambda, k as u64, oracle)?;
        let estimate = eps_hat(y_norm, delta);
        let (true_err, tau_hat) = match (oracle, &u_ref) {
            (Some(o), Some(ur)) => {
                let te = o.x_dist(&u, ur)?;
                let tau = (te > 0.0).then(|| estimate / te);
                (Some(te), tau)
            }
            _ => (None, None),
        };
        trace.push(IterationRecord {
            k,
            yk_norm: y_norm,
            eps_hat: estimate,
            true_err,
            tau_hat,
            rank_u: u.rank(),
            rank_y,
            lambda_certified: certified,
            seconds: started.elapsed().as_secs_f64(),
        });

        if cfg.target_estimate.is_some_and(|t| estimate <= t) || estimate == 0.0 {
            status = SolveStatus::Converged;
            break;
        }
        if estimate > cfg.divergence_factor * eps_min {
            status = SolveStatus::Diverged;
            warnings.push(format!(
                "estimate {estimate:.3e} exceeded {} times its minimum at iteration {k}",
                cfg.divergence_factor
            ));
            break;
        }
        eps_min = eps_min.min(estimate);
        if trace.len() > cfg.stagnation_window {
            let split = trace.len() - cfg.stagnation_window;
            let best_before = trace[..split]
                .iter()
                .map(|r| r.eps_hat)
                .fold(f64::INFINITY, f64::min);
            let best_recent = trace[split..]
                .iter()
                .map(|r| r.eps_hat)
                .fold(f64::INFINITY, f64::min);
            if best_recent >= best_before * (1.0 - cfg.stagnation_tol) {
                status = SolveStatus::Stagnated;
                break;
            }
        }

        let direction = metric_solve(rx, &a.adjoint().apply(&y)?)?;
        let raw = u.add(&direction.scale(-cfg.step))?;
        if raw.rank() > cfg.rank_warn && !rank_warned {
            warnings.push(format!(
                "pre-projection rank {} exceeded {} at iteration {k}",
                raw.rank(),
                cfg.rank_warn
            ));
            rank_warned = true;
        }
        u = match &cfg.projection {
            Some(spec) => project_best(&raw, spec, rx, cfg.projection_seed)?,
            None => raw,
        };
    }

    Ok(SolveOutcome {
        u,
        trace,
        status,
        warnings,
    })
}

/// The solution metric as a one-term Kronecker operator (for quadratic
/// projection problems).
fn metric_operator(rx: &RankOneMetric) -> Result<LowRankOperator> {
    let factors = (0..rx.order())
        .map(|mu| match rx.gram(mu) {
            Gram::Identity(n) => Factor::identity(*n),
            Gram::Diagonal(d) => {
                let mut tri = TriMat::new((d.len(), d.len()));
                for (i, &v) in d.iter().enumerate() {
                    tri.add_triplet(i, i, v);
                }
                Factor::Sparse(tri.to_csr())
            }
            Gram::Dense { matrix, .. } => Factor::Dense(matrix.clone()),
        })
        .collect();
    LowRankOperator::new(vec![factors])
}

/// Quasi-best rank-`target` approximation of `x` in the `R_X` norm.
pub fn project_best(
    x: &CanonicalTensor,
    spec: &FormatSpec,
    rx: &RankOneMetric,
    seed: u64,
) -> Result<CanonicalTensor> {
    if x.rank() <= spec.target_rank {
        return Ok(x.clone());
    }
    match spec.projector {
        ProjectorKind::Svd2d => svd2d_project(x, spec.target_rank, rx),
        ProjectorKind::Als | ProjectorKind::GreedyRankOne => {
            let op = metric_operator(rx)?;
            let rhs_factors = (0..x.order())
                .map(|mu| rx.gram(mu).apply(x.factor(mu)))
                .collect();
            let rhs = CanonicalTensor::from_factors(rhs_factors)?;
            let cfg = LambdaConfig {
                max_rank: spec.target_rank,
                update_dims: match spec.projector {
                    ProjectorKind::GreedyRankOne => Some(Vec::new()),
                    _ => None,
                },
                seed,
                ..LambdaConfig::default()
            };
            let (p, _) = greedy_minimize(&QuadForm::Explicit(&op), &rhs, &cfg, None, None)?;
            Ok(p)
        }
    }
}

/// Classical-metric baseline: minimize `‖A v − b‖₂` over rank-`rank`
/// canonical tensors through the normal equations, with the same greedy
/// engine the residual approximation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmrMode {
    /// Pure rank-one greedy corrections.
    Greedy,
    /// Greedy corrections plus dimension re-solves (ALS quality).
    Als,
}

#[derive(Clone, Debug)]
pub struct CmrOutcome {
    pub u: CanonicalTensor,
    pub objective_history: Vec<f64>,
    /// `‖A u − b‖₂`, dense when an oracle is supplied.
    pub residual_norm: f64,
}

pub fn cmr_solve(
    a: &LowRankOperator,
    b: &CanonicalTensor,
    rank: usize,
    mode: CmrMode,
    seed: u64,
    oracle: Option<&DenseOracle>,
) -> Result<CmrOutcome> {
    let normal = normal_operator(a)?;
    let g = a.adjoint().apply(b)?;
    let cfg = LambdaConfig {
        max_rank: rank,
        update_dims: match mode {
            CmrMode::Greedy => Some(Vec::new()),
            CmrMode::Als => None,
        },
        update_passes: match mode {
            CmrMode::Greedy => 0,
            CmrMode::Als => 2,
        },
        seed,
        ..LambdaConfig::default()
    };
    let (u, report) = greedy_minimize(&QuadForm::Explicit(&normal), &g, &cfg, None, None)?;
    let residual_norm = match oracle {
        Some(o) => o.residual_functional(&u, b)?.norm(),
        None => {
            let identity = RankOneMetric::identity(a.row_dims());
            a.apply(&u)?.add(&b.scale(-1.0))?.norm(&identity)?
        }
    };
    Ok(CmrOutcome {
        u,
        objective_history: report.objective_history,
        residual_norm,
    })
}

/// Geometric-mean contraction factor over the linear phase of an error
/// history: the leading entries still above `floor_factor` times the best
/// value seen. `None` when fewer than two entries qualify.
pub fn fit_linear_rate(errors: &[f64], floor_factor: f64) -> Option<f64> {
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let cutoff = floor_factor * min;
    let phase: Vec<f64> = errors
        .iter()
        .copied()
        .take_while(|&e| e > cutoff)
        .collect();
    if phase.len() < 2 {
        return None;
    }
    let (first, last) = (phase[0], *phase.last().expect("nonempty"));
    if first <= 0.0 || last <= 0.0 {
        return None;
    }
    Some((last / first).powf(1.0 / (phase.len() - 1) as f64))
}
