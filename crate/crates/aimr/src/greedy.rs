//! Weak greedy outer loop: rank-one corrections with convergence diagnostics.
//!
//! Starting from `u_0 = 0`, each step adds a rank-one correction,
//! `u_m = u_{m-1} + w̃_m`, where `w̃_m` is computed by the perturbed gradient
//! iteration on the residual system `A w = b − A u_{m-1}` projected onto
//! rank-one tensors. Running that iteration to stagnation with lift accuracy
//! `δ_m` makes the correction quasi-optimal with slack factor
//! `1 + γ_m`, `γ_m > 2δ_m / (1 − 2δ_m)`.
//!
//! Convergence of the outer loop is monitored through computable quantities:
//! the estimated per-step error reduction `α̃_m = ‖f_m‖ / ‖f_{m-1}‖` (with
//! `f_m = u − u_m` and all norms in `X`), the energy-identity coefficient
//! `κ_m² = 2⟨f_{m-1}, w̃_m⟩ / ‖w̃_m‖² − 1`, and the sufficient condition
//! `α̃_m² ≤ (1 − ε) / ((1 + γ_m)² − ε)` which guarantees `u_m → u` when it
//! holds with a fixed `ε ∈ (0, 1)`. The error norms themselves are not
//! computable without `u`; the recorded values substitute the residual-based
//! estimate `ε̂`, which is accurate to a factor `1/√(1 − δ²)`. Exact values
//! appear alongside when a dense oracle is supplied.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::operator::DualMetric;
use crate::oracle::DenseOracle;
use crate::solver::{eps_hat, gradient_solve, residual_lift, LambdaMode, SolverConfig};
use crate::tensor::{svd2d_project, CanonicalTensor, FormatSpec, RankOneMetric, TensorFamily};
use crate::{Error, Result};

/// Quasi-optimality slack achievable with lift accuracy `delta`, with a
/// relative margin of `1e-3` so the strict inequality survives round-off.
pub fn gamma_for(delta: f64) -> f64 {
    2.0 * delta / (1.0 - 2.0 * delta) * (1.0 + 1e-3)
}

/// Per-step precision schedule and stopping parameters of the outer loop.
///
/// `delta` lists the lift accuracies `δ_m`; the last entry repeats when the
/// loop runs longer than the list. Every `δ_m` must lie in `(0, 1/2)` so the
/// derived slack `γ_m = gamma_for(δ_m)` stays finite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedySchedule {
    /// Maximum number of rank-one corrections.
    pub r_max: usize,
    /// Lift accuracy per step; the last entry repeats.
    pub delta: Vec<f64>,
    /// Constant `ε ∈ (0, 1)` of the sufficient convergence condition.
    pub epsilon: f64,
    /// Stop once the estimated error falls below this fraction of the
    /// initial estimate.
    pub stop_tol: f64,
    /// Stop after this many consecutive steps violating the condition.
    pub condition_patience: usize,
}

impl GreedySchedule {
    pub fn constant(r_max: usize, delta: f64) -> Self {
        Self {
            r_max,
            delta: vec![delta],
            epsilon: 0.1,
            stop_tol: 1e-8,
            condition_patience: 3,
        }
    }

    /// Lift accuracy for step `m` (1-based).
    pub fn delta_m(&self, m: usize) -> f64 {
        let i = (m - 1).min(self.delta.len() - 1);
        self.delta[i]
    }

    /// Quasi-optimality slack for step `m` (1-based).
    pub fn gamma_m(&self, m: usize) -> f64 {
        gamma_for(self.delta_m(m))
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 {
            return Err(Error::InvalidConfig("r_max must be at least 1".into()));
        }
        if self.delta.is_empty() {
            return Err(Error::InvalidConfig("delta schedule is empty".into()));
        }
        for &d in &self.delta {
            if !(d > 0.0 && d < 0.5) {
                return Err(Error::InvalidConfig(format!(
                    "delta must lie in (0, 1/2), got {d}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_tol must be non-negative, got {}",
                self.stop_tol
            )));
        }
        if self.condition_patience == 0 {
            return Err(Error::InvalidConfig(
                "condition_patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sufficient convergence condition `α̃_m² ≤ (1 − ε) / ((1 + γ_m)² − ε)`.
pub fn greedy_condition_check(alpha_tilde: f64, gamma: f64, epsilon: f64) -> bool {
    alpha_tilde * alpha_tilde <= (1.0 - epsilon) / ((1.0 + gamma) * (1.0 + gamma) - epsilon)
}

/// Settings of the inner correction solves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Template for the per-step gradient solves. The lift accuracy is
    /// overridden by the schedule's `δ_m`, and the projection is forced to
    /// rank one (keeping the configured projector kind, if any).
    pub inner: SolverConfig,
    pub seed: u64,
    /// Retain the corrections `w̃_m` for post-hoc identity audits.
    pub keep_corrections: bool,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            inner: SolverConfig {
                max_iters: 30,
                stagnation_window: 4,
                ..SolverConfig::default()
            },
            seed: 0,
            keep_corrections: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyStatus {
    /// Estimated error reached `stop_tol` relative to the start.
    Converged,
    /// A correction made no estimated progress even after halving `δ_m`.
    Stalled,
    /// The convergence condition failed `condition_patience` times in a row.
    ConditionFailed,
    MaxCorrections,
}

/// Per-step record. Estimated quantities come from `ε̂` before and after the
/// correction; the `*_true` fields are filled only on oracle runs
/// (`alpha_true` additionally needs order 2, where the exact best rank-one
/// correction is a weighted SVD truncation).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyRow {
    pub m: usize,
    /// Estimated `‖f_{m-1}‖_X` before the correction.
    pub est_err: f64,
    pub alpha_tilde: f64,
    /// Energy-identity coefficient, estimated from the drop of `ε̂`.
    pub kappa: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Lower bound `μ_m² ≥ ε`, using the exact `α_m` when available and the
    /// computable `α̃_m` otherwise (which makes it equal `condition_ok`).
    pub mu_lb_ok: bool,
    pub condition_ok: bool,
    /// Largest lift rank across the step (inner iterations and the
    /// post-correction estimate).
    pub rank_y_max: usize,
    pub seconds: f64,
    /// Whether `δ_m` was halved once after a no-progress correction.
    pub retried: bool,
    /// Whether the correction was accepted into `u_m`.
    pub accepted: bool,
    pub alpha_true: Option<f64>,
    pub alpha_tilde_true: Option<f64>,
    pub kappa_true: Option<f64>,
}

impl GreedyRow {
    pub const CSV_HEADER: &'static str =
        "m,est_err,alpha_tilde,kappa,mu_lb_ok,condition_ok,rank_y_max,seconds";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{},{},{},{:.3e}",
            self.m,
            self.est_err,
            self.alpha_tilde,
            self.kappa,
            self.mu_lb_ok,
            self.condition_ok,
            self.rank_y_max,
            self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct GreedyDiagnostics {
    pub rows: Vec<GreedyRow>,
    pub status: GreedyStatus,
    /// Estimated `‖u‖_X` (the error at `u_0 = 0`).
    pub initial_estimate: f64,
    /// Estimated error after the last accepted correction.
    pub final_estimate: f64,
    /// The accepted corrections, in order, when `keep_corrections` is set.
    pub corrections: Vec<CanonicalTensor>,
}

fn lambda_with(mode: &LambdaMode, delta: f64, bump: u64) -> LambdaMode {
    match mode {
        LambdaMode::Greedy { config } => {
            let mut c = config.clone();
            c.delta = delta;
            c.seed = c.seed.wrapping_add(bump);
            LambdaMode::Greedy { config: c }
        }
        LambdaMode::DenseExact => LambdaMode::DenseExact,
        LambdaMode::DenseTruncated { seed, .. } => LambdaMode::DenseTruncated {
            delta,
            seed: seed.wrapping_add(bump),
        },
    }
}

fn rank_one_spec(template: Option<&FormatSpec>, order: usize) -> FormatSpec {
    match template {
        Some(spec) => FormatSpec {
            family: TensorFamily::Canonical,
            target_rank: 1,
            projector: spec.projector,
        },
        None if order == 2 => FormatSpec::svd2d(1),
        None => FormatSpec::als(1),
    }
}

/// The weak greedy loop on `A u = b`.
///
/// Returns the accumulated approximation (rank equals the number of accepted
/// corrections) together with per-step diagnostics. A correction whose
/// estimated reduction factor reaches 1 is retried once with `δ_m / 2` and,
/// failing again, rejected with status [`GreedyStatus::Stalled`].
pub fn weak_greedy_solve(
    dual: &DualMetric,
    b: &CanonicalTensor,
    sched: &GreedySchedule,
    cfg: &GreedyConfig,
    oracle: Option<&DenseOracle>,
) -> Result<(CanonicalTensor, GreedyDiagnostics)> {
    sched.validate()?;
    let dims = dual.dims();
    if b.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "rhs dims {:?} do not match operator dims {:?}",
            b.dims(),
            dims
        )));
    }
    let a = dual.operator();
    let rx = dual.solution_metric();
    let spec = rank_one_spec(cfg.inner.projection.as_ref(), dims.len());
    let u_ref = match oracle {
        Some(o) => Some(o.reference(b)?),
        None => None,
    };

    let mut u = CanonicalTensor::zeros(&dims);
    let mut rows: Vec<GreedyRow> = Vec::new();
    let mut corrections: Vec<CanonicalTensor> = Vec::new();
    let mut status = GreedyStatus::MaxCorrections;
    let mut lift_tag: u64 = 0;
    let mut condition_streak = 0usize;

    let estimate = |u: &CanonicalTensor, delta: f64, tag: u64| -> Result<(f64, usize)> {
        let lambda = lambda_with(&cfg.inner.lambda, delta, cfg.seed);
        let (_, rank_y, _, y_norm) = residual_lift(dual, b, u, &lambda, tag, oracle)?;
        Ok((eps_hat(y_norm, lambda.delta()), rank_y))
    };
    lift_tag += 1;
    let (initial_estimate, _) = estimate(&u, sched.delta_m(1), lift_tag)?;
    let mut est_prev = initial_estimate;

    for m in 1..=sched.r_max {
        if est_prev <= sched.stop_tol * initial_estimate {
            status = GreedyStatus::Converged;
            break;
        }
        let started = Instant::now();
        let f_prev_dense = match (oracle, &u_ref) {
            (Some(o), Some(ur)) => Some(ur - o.flatten(&u)?),
            _ => None,
        };
        let rhs_m = b.add(&a.apply(&u)?.scale(-1.0))?;

        let mut delta_used = sched.delta_m(m);
        let mut retried = false;
        let (w, w_norm, est_after, rank_y_max) = loop {
            let mut inner = cfg.inner.clone();
            inner.lambda = lambda_with(
                &cfg.inner.lambda,
                delta_used,
                cfg.seed.wrapping_add(1009 * m as u64 + retried as u64),
            );
            inner.projection = Some(spec);
            inner.projection_seed = cfg.inner.projection_seed.wrapping_add(m as u64);
            let out = gradient_solve(dual, &rhs_m, &inner, oracle)?;
            let candidate = u.add(&out.u)?;
            lift_tag += 1;
            let (est_after, est_rank) = estimate(&candidate, delta_used, lift_tag)?;
            let rank_y_max = out
                .trace
                .iter()
                .map(|r| r.rank_y)
                .chain([est_rank])
                .max()
                .unwrap_or(0);
            let alpha = est_after / est_prev;
            let w_norm = out.u.norm(rx)?;
            if alpha < 1.0 && w_norm > 0.0 {
                break (out.u, w_norm, est_after, rank_y_max);
            }
            if retried {
                rows.push(GreedyRow {
                    m,
                    est_err: est_prev,
                    alpha_tilde: alpha,
                    kappa: 0.0,
                    delta: delta_used,
                    gamma: gamma_for(delta_used),
                    mu_lb_ok: false,
                    condition_ok: false,
                    rank_y_max,
                    seconds: started.elapsed().as_secs_f64(),
                    retried,
                    accepted: false,
                    alpha_true: None,
                    alpha_tilde_true: None,
                    kappa_true: None,
                });
                status = GreedyStatus::Stalled;
                break (CanonicalTensor::zeros(&dims), 0.0, est_after, rank_y_max);
            }
            retried = true;
            delta_used /= 2.0;
        };
        if status == GreedyStatus::Stalled {
            break;
        }

        let alpha_tilde = est_after / est_prev;
        let gamma = gamma_for(delta_used);
        let kappa = (est_prev * est_prev - est_after * est_after).max(0.0).sqrt() / w_norm;
        let condition_ok = greedy_condition_check(alpha_tilde, gamma, sched.epsilon);

        let (alpha_true, alpha_tilde_true, kappa_true, mu_lb_ok) = match (oracle, &f_prev_dense) {
            (Some(o), Some(fp)) => {
                let w_dense = DVector::from_vec(w.to_dense()?);
                let f_next = fp - &w_dense;
                let nf = o.x_norm(fp);
                let att = o.x_norm(&f_next) / nf;
                let nw = o.x_norm(&w_dense);
                let k2 = 2.0 * o.x_inner(fp, &w_dense) / (nw * nw) - 1.0;
                let kt = if k2 >= 0.0 { k2.sqrt() } else { f64::NAN };
                let at = if dims.len() == 2 {
                    let best = svd2d_project(&o.to_canonical2d(fp)?, 1, rx)?;
                    Some(o.x_dist(&best, fp)? / nf)
                } else {
                    None
                };
                let mu_ok = match at {
                    Some(a_true) => {
                        let g1 = (1.0 + gamma) * (1.0 + gamma);
                        let mu2 = (1.0 - g1 * a_true * a_true) / (1.0 - a_true * a_true);
                        mu2 >= sched.epsilon
                    }
                    None => condition_ok,
                };
                (at, Some(att), Some(kt), mu_ok)
            }
            _ => (None, None, None, condition_ok),
        };

        u = u.add(&w)?;
        if cfg.keep_corrections {
            corrections.push(w);
        }
        rows.push(GreedyRow {
            m,
            est_err: est_prev,
            alpha_tilde,
            kappa,
            delta: delta_used,
            gamma,
            mu_lb_ok,
            condition_ok,
            rank_y_max,
            seconds: started.elapsed().as_secs_f64(),
            retried,
            accepted: true,
            alpha_true,
            alpha_tilde_true,
            kappa_true,
        });
        est_prev = est_after;

        if condition_ok {
            condition_streak = 0;
        } else {
            condition_streak += 1;
            if condition_streak >= sched.condition_patience {
                status = GreedyStatus::ConditionFailed;
                break;
            }
        }
    }
    if status == GreedyStatus::MaxCorrections && est_prev <= sched.stop_tol * initial_estimate {
        status = GreedyStatus::Converged;
    }

    Ok((
        u,
        GreedyDiagnostics {
            rows,
            status,
            initial_estimate,
            final_estimate: est_prev,
            corrections,
        },
    ))
}

/// Per-step results of [`greedy_identities_audit`]. The `μ`-based checks are
/// only meaningful when the step satisfies both the contraction assumption
/// `(1 + γ_m) α_m < 1` and the quasi-optimality bound
/// `α̃_m ≤ (1 + γ_m) α_m`; `quasi_ok` records that gate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditStep {
    pub m: usize,
    /// Relative defect of `‖f_m‖² = ‖f_{m-1}‖² − κ_m² ‖w̃_m‖²`.
    pub energy_rel_err: f64,
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub kappa: f64,
    pub mu: f64,
    pub quasi_ok: bool,
    /// `κ_m ‖w̃_m‖ ≤ ‖w_m‖` (unconditional) and `μ_m ‖w_m‖ ≤ κ_m ‖w̃_m‖`
    /// (under `quasi_ok`).
    pub sandwich_ok: bool,
    /// `μ_m / 2 ≤ κ_m` (under `quasi_ok`).
    pub half_mu_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyAuditReport {
    pub steps: Vec<AuditStep>,
    /// Relative defect of `‖f_0‖² − ‖f_M‖² = Σ κ_i² ‖w̃_i‖²`.
    pub telescoping_rel_err: f64,
    pub tolerance: f64,
    pub ok: bool,
    pub failures: Vec<String>,
}

/// Dense verification of the per-step identities of the greedy loop.
///
/// Recomputes `f_m = u − u_m` exactly from the recorded corrections and
/// checks, per step: the energy identity, the sandwich
/// `μ_m ‖w_m‖ ≤ κ_m ‖w̃_m‖ ≤ ‖w_m‖` against the exact best rank-one
/// correction, the bound `μ_m / 2 ≤ κ_m`, and finally the telescoping sum
/// `‖f_0‖² − ‖f_M‖² = Σ κ_i² ‖w̃_i‖²`. Requires an order-2 oracle (the best
/// rank-one correction is computed by weighted SVD truncation) and a
/// diagnostics record retaining the corrections.
pub fn greedy_identities_audit(
    oracle: &DenseOracle,
    rx: &RankOneMetric,
    u: &DVector<f64>,
    diag: &GreedyDiagnostics,
    tol: f64,
) -> Result<GreedyAuditReport> {
    if oracle.dims().len() != 2 {
        return Err(Error::OrderMismatch {
            expected: 2,
            got: oracle.dims().len(),
        });
    }
    let accepted: Vec<&GreedyRow> = diag.rows.iter().filter(|r| r.accepted).collect();
    if accepted.len() != diag.corrections.len() {
        return Err(Error::InvalidConfig(format!(
            "{} accepted steps but {} retained corrections; run with keep_corrections",
            accepted.len(),
            diag.corrections.len()
        )));
    }

    let mut steps = Vec::with_capacity(accepted.len());
    let mut failures = Vec::new();
    let mut f = u.clone();
    let nf0_sq = {
        let n = oracle.x_norm(&f);
        n * n
    };
    let mut kappa_sum = 0.0;
    for (row, w) in accepted.iter().zip(&diag.corrections) {
        let w_dense = DVector::from_vec(w.to_dense()?);
        let nw = oracle.x_norm(&w_dense);
        if nw == 0.0 {
            failures.push(format!("step {}: zero correction", row.m));
            break;
        }
        let nf_prev = oracle.x_norm(&f);
        let kappa2 = 2.0 * oracle.x_inner(&f, &w_dense) / (nw * nw) - 1.0;
        let f_next = &f - &w_dense;
        let nf_next = oracle.x_norm(&f_next);

        let energy_rel_err = (nf_next * nf_next - (nf_prev * nf_prev - kappa2 * nw * nw)).abs()
            / (nf_prev * nf_prev);
        if energy_rel_err > tol {
            failures.push(format!(
                "step {}: energy identity off by {energy_rel_err:.3e}",
                row.m
            ));
        }

        let best = svd2d_project(&oracle.to_canonical2d(&f)?, 1, rx)?;
        let alpha = oracle.x_dist(&best, &f)? / nf_prev;
        let alpha_tilde = nf_next / nf_prev;
        let nw_best = {
            let bd = DVector::from_vec(best.to_dense()?);
            oracle.x_norm(&bd)
        };

        let kappa = if kappa2 >= 0.0 { kappa2.sqrt() } else { f64::NAN };
        let gamma = row.gamma;
        let contraction_ok = (1.0 + gamma) * alpha < 1.0;
        let quasi_ok = contraction_ok && alpha_tilde <= (1.0 + gamma) * alpha * (1.0 + tol);
        let mu = if contraction_ok {
            let g1 = (1.0 + gamma) * (1.0 + gamma);
            (((1.0 - g1 * alpha * alpha) / (1.0 - alpha * alpha)).clamp(0.0, 1.0)).sqrt()
        } else {
            f64::NAN
        };

        let slack = 1.0 + tol;
        let upper_ok = kappa * nw <= nw_best * slack;
        let lower_ok = !quasi_ok || mu * nw_best <= kappa * nw * slack;
        let sandwich_ok = upper_ok && lower_ok;
        if !upper_ok {
            failures.push(format!(
                "step {}: κ‖w̃‖ = {:.6e} exceeds ‖w‖ = {:.6e}",
                row.m,
                kappa * nw,
                nw_best
            ));
        }
        if !lower_ok {
            failures.push(format!(
                "step {}: μ‖w‖ = {:.6e} exceeds κ‖w̃‖ = {:.6e}",
                row.m,
                mu * nw_best,
                kappa * nw
            ));
        }
        let half_mu_ok = !quasi_ok || mu / 2.0 <= kappa * slack;
        if !half_mu_ok {
            failures.push(format!("step {}: μ/2 = {:.6e} exceeds κ = {:.6e}", row.m, mu / 2.0, kappa));
        }

        kappa_sum += kappa2 * nw * nw;
        steps.push(AuditStep {
            m: row.m,
            energy_rel_err,
            alpha,
            alpha_tilde,
            kappa,
            mu,
            quasi_ok,
            sandwich_ok,
            half_mu_ok,
        });
        f = f_next;
    }
    let nf_last = oracle.x_norm(&f);
    let telescoping_rel_err = ((nf0_sq - nf_last * nf_last) - kappa_sum).abs() / nf0_sq;
    if telescoping_rel_err > tol {
        failures.push(format!(
            "telescoping identity off by {telescoping_rel_err:.3e}"
        ));
    }
    let ok = failures.is_empty();
    Ok(GreedyAuditReport {
        steps,
        telescoping_rel_err,
        tolerance: tol,
        ok,
        failures,
    })
}
