//! Greedy low-rank approximation of the lifted residual (the `Λ^δ` map).
//!
//! Given an SPD quadratic form `Q` with Kronecker-term structure and a
//! functional `g`, the greedy engine minimizes `J(y) = ⟨Qy, y⟩ − 2⟨g, y⟩`
//! over canonical tensors of increasing rank. With `Q = R_Y` and
//! `g = A u − b` the minimizer is the lifted residual `r = R_Y⁻¹(A u − b)`,
//! which is exactly the quantity the gradient iteration needs; crucially, `r`
//! itself is never formed, every evaluation goes through the duality pairing
//! with `g`.
//!
//! One greedy step adds a rank-one ALS correction and then re-solves all
//! factor columns of selected dimensions (a dimension update), so the rank-`m`
//! iterate is optimal over each dimension's full coefficient block. Stopping
//! uses the stagnation ratio `e_m^p = ‖y_m − y_{m+p}‖_Y / ‖y_{m+p}‖_Y ≤ δ`,
//! trading `p` extra iterations for a certificate that the relative accuracy
//! δ has been reached.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::solve_spd_jittered;
use crate::operator::{DualMetric, LowRankOperator};
use crate::tensor::{CanonicalTensor, RankOneMetric};
use crate::{Error, Result};

/// The SPD quadratic form the greedy engine minimizes over.
pub enum QuadForm<'a> {
    /// The ideal residual metric `R_Y = A R_X⁻¹ A*`.
    Dual(&'a DualMetric),
    /// An explicitly symmetric sum of Kronecker terms (e.g. `A*A`).
    Explicit(&'a LowRankOperator),
}

impl QuadForm<'_> {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            QuadForm::Dual(d) => d.dims(),
            QuadForm::Explicit(op) => op.row_dims().to_vec(),
        }
    }

    pub fn apply(&self, y: &CanonicalTensor) -> Result<CanonicalTensor> {
        match self {
            QuadForm::Dual(d) => d.apply(y),
            QuadForm::Explicit(op) => op.apply(y),
        }
    }

    /// Kronecker terms used for reduced-system assembly.
    pub fn terms_op(&self) -> Result<&LowRankOperator> {
        match self {
            QuadForm::Dual(d) => d.terms_op(),
            QuadForm::Explicit(op) => Ok(op),
        }
    }

    pub fn inner(&self, x: &CanonicalTensor, z: &CanonicalTensor) -> Result<f64> {
        let identity = RankOneMetric::identity(&self.dims());
        self.apply(x)?.inner(z, &identity)
    }

    /// `‖x‖_Q` with round-off clamping.
    pub fn norm(&self, x: &CanonicalTensor) -> Result<f64> {
        let identity = RankOneMetric::identity(&self.dims());
        let qx = self.apply(x)?;
        let ip = qx.inner(x, &identity)?;
        let bound = qx.norm(&identity)? * x.norm(&identity)?;
        if ip < -1e-12 * bound {
            return Err(Error::NumericalBreakdown(format!(
                "quadratic form produced negative squared norm {ip:.3e}"
            )));
        }
        Ok(ip.max(0.0).sqrt())
    }
}

/// Residual-lift problem: minimize `‖y − r‖_Y` knowing only `R_Y` and the
/// functional `rhs = A u − b` (with `R_Y r = rhs`).
pub struct ResidualProblem<'a> {
    pub form: QuadForm<'a>,
    pub rhs: CanonicalTensor,
}

/// ALS sweep control for rank-one corrections.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AlsConfig {
    pub max_sweeps: usize,
    /// Relative objective-change tolerance that ends the sweeps.
    pub tol: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 40,
            tol: 1e-9,
        }
    }
}

/// Configuration of the greedy residual approximation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaConfig {
    /// Relative accuracy target of the stagnation stopping rule.
    pub delta: f64,
    /// Stagnation window: `e_m^p` compares iterates `p` ranks apart. Small
    /// windows are cheap; effectivity studies raise this to 20.
    pub p: usize,
    /// Hard cap on the number of greedy corrections.
    pub max_rank: usize,
    /// Dimensions whose full coefficient block is re-solved after each
    /// correction; `None` means every dimension that fits the solve guard.
    pub update_dims: Option<Vec<usize>>,
    /// Dimension-update passes per greedy step.
    pub update_passes: usize,
    /// Largest `rank · n_μ` block system the dimension update will solve.
    pub update_guard: usize,
    pub als: AlsConfig,
    pub seed: u64,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            p: 3,
            max_rank: 100,
            update_dims: None,
            update_passes: 1,
            update_guard: 10_000,
            als: AlsConfig::default(),
            seed: 0,
        }
    }
}

/// Outcome summary of one `Λ^δ` evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaReport {
    pub delta: f64,
    pub p: usize,
    /// Rank of the returned iterate.
    pub rank: usize,
    /// `J(y_m)` after each greedy step.
    pub objective_history: Vec<f64>,
    /// Stagnation ratios `e_{m-p}^p`, first entry at `m = p+1`.
    pub e_history: Vec<f64>,
    /// Whether the stopping rule `e ≤ δ` was reached before `max_rank`.
    pub certified: bool,
    /// `‖y‖_Y` of the returned iterate.
    pub y_norm: f64,
    pub seed: u64,
    /// Dimensions whose update was ever skipped (guard or solver failure).
    pub skipped_dim_updates: Vec<usize>,
}

/// Stagnation ratio with the degenerate conventions `0/0 = 0` (an exactly
/// converged pair) and `x/0 = ∞` (no certificate possible).
pub fn stagnation_estimate(diff_norm: f64, later_norm: f64) -> f64 {
    if later_norm == 0.0 {
        if diff_norm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff_norm / later_norm
    }
}

/// `Λ^δ`: greedy low-rank approximation of the lifted residual of
/// `problem.rhs` in the metric of `problem.form`, stopping when the
/// stagnation estimate certifies relative accuracy δ.
pub fn lambda_delta(problem: &ResidualProblem, cfg: &LambdaConfig) -> Result<(CanonicalTensor, LambdaReport)> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda delta must lie in (0, 1), got {}",
            cfg.delta
        )));
    }
    if cfg.p == 0 {
        return Err(Error::InvalidConfig("stagnation window p must be at least 1".into()));
    }
    greedy_minimize(&problem.form, &problem.rhs, cfg, Some(cfg.delta), None)
}

/// Runs the greedy loop without the stagnation stop and returns every
/// iterate `y_1, …, y_{max_rank}` with its `Q`-norm. Diagnostic companion to
/// [`lambda_delta`] for studying the stagnation indicator itself: from the
/// history both `e_m^p` for arbitrary lookahead `p` and exact errors against
/// a reference lift can be formed after the fact.
pub fn lambda_iterates(
    problem: &ResidualProblem,
    cfg: &LambdaConfig,
    max_rank: usize,
) -> Result<Vec<(CanonicalTensor, f64)>> {
    let mut run = cfg.clone();
    run.max_rank = max_rank;
    let mut history = Vec::with_capacity(max_rank);
    greedy_minimize(&problem.form, &problem.rhs, &run, None, Some(&mut history))?;
    Ok(history)
}

/// Shared greedy engine: with `stop_delta = Some(δ)` it runs the stagnation
/// rule; with `None` it builds exactly `max_rank` corrections (the greedy
/// classical-metric solver uses this). When `history` is supplied every
/// iterate is pushed onto it together with its `Q`-norm.
pub(crate) fn greedy_minimize(
    form: &QuadForm,
    rhs: &CanonicalTensor,
    cfg: &LambdaConfig,
    stop_delta: Option<f64>,
    mut history: Option<&mut Vec<(CanonicalTensor, f64)>>,
) -> Result<(CanonicalTensor, LambdaReport)> {
    let dims = form.dims();
    if rhs.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "rhs dims {:?} do not match form dims {:?}",
            rhs.dims(),
            dims
        )));
    }
    let identity = RankOneMetric::identity(&dims);
    let mut report = LambdaReport {
        delta: stop_delta.unwrap_or(0.0),
        p: cfg.p,
        rank: 0,
        objective_history: Vec::new(),
        e_history: Vec::new(),
        certified: false,
        y_norm: 0.0,
        seed: cfg.seed,
        skipped_dim_updates: Vec::new(),
    };

    // zero functional: the lift is exactly zero
    if rhs.rank() == 0 || rhs.norm(&identity)? == 0.0 {
        report.certified = true;
        return Ok((CanonicalTensor::zeros(&dims), report));
    }

    let terms = form.terms_op()?;
    let mut skipped: BTreeSet<usize> = BTreeSet::new();
    // ring of the last p+1 iterates with their Q-norms
    let mut ring: VecDeque<(CanonicalTensor, f64)> = VecDeque::with_capacity(cfg.p + 2);
    ring.push_back((CanonicalTensor::zeros(&dims), 0.0));
    let mut y = CanonicalTensor::zeros(&dims);

    for m in 1..=cfg.max_rank {
        // functional of the correction problem: g − Q y_{m-1}
        let g_eff = if y.rank() == 0 {
            rhs.clone()
        } else {
            rhs.add(&form.apply(&y)?.scale(-1.0))?
        };
        if g_eff.norm(&identity)? <= 1e-300 {
            // exact stagnation; the current iterate is the lift itself
            report.certified = true;
            break;
        }
        let w = rank_one_correction(terms, &g_eff, cfg.seed.wrapping_add(m as u64), &cfg.als)?;
        y = y.add(&w)?;

        for _ in 0..cfg.update_passes {
            let selected: Vec<usize> = match &cfg.update_dims {
                Some(list) => list.clone(),
                None => (0..dims.len()).collect(),
            };
            for mu in selected {
                if mu >= dims.len() {
                    return Err(Error::InvalidConfig(format!(
                        "update dimension {mu} out of range for order {}",
                        dims.len()
                    )));
                }
                if y.rank() * dims[mu] > cfg.update_guard {
                    skipped.insert(mu);
                    continue;
                }
                match dimension_update(terms, rhs, &mut y, mu) {
                    Ok(()) => {}
                    Err(Error::NumericalBreakdown(_)) => {
                        skipped.insert(mu);
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let qyy = form.inner(&y, &y)?;
        let gy = rhs.inner(&y, &identity)?;
        report.objective_history.push(qyy - 2.0 * gy);
        let y_norm = qyy.max(0.0).sqrt();
        if let Some(h) = history.as_deref_mut() {
            h.push((y.clone(), y_norm));
        }
        ring.push_back((y.clone(), y_norm));

        if ring.len() == cfg.p + 2 {
            ring.pop_front();
        }
        if let Some(delta) = stop_delta {
            if ring.len() == cfg.p + 1 {
                let (old, _) = ring.front().expect("ring nonempty");
                let diff = old.add(&y.scale(-1.0))?;
                let e = stagnation_estimate(form.norm(&diff)?, y_norm);
                report.e_history.push(e);
                if e <= delta {
                    let (accepted, accepted_norm) = ring.pop_front().expect("ring nonempty");
                    report.certified = true;
                    report.rank = accepted.rank();
                    report.y_norm = accepted_norm;
                    report.skipped_dim_updates = skipped.into_iter().collect();
                    return Ok((accepted, report));
                }
            }
        }
    }

    // max_rank exhausted (or exact convergence): return the deepest iterate
    let (last, last_norm) = ring.pop_back().expect("ring nonempty");
    report.rank = last.rank();
    report.y_norm = last_norm;
    report.skipped_dim_updates = skipped.into_iter().collect();
    Ok((last, report))
}

/// Best rank-one correction by ALS: minimizes `⟨Qw, w⟩ − 2⟨g_eff, w⟩` over
/// rank-one `w`. Each dimension solve is an `n_μ × n_μ` SPD system assembled
/// from the form's per-dimension term blocks.
#[allow(clippy::needless_range_loop)]
fn rank_one_correction(
    terms: &LowRankOperator,
    g_eff: &CanonicalTensor,
    seed: u64,
    als: &AlsConfig,
) -> Result<CanonicalTensor> {
    let dims: Vec<usize> = terms.row_dims().to_vec();
    let d = dims.len();
    let nt = terms.num_terms();
    let rg = g_eff.rank();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<DVector<f64>> = dims
        .iter()
        .map(|&n| {
            let v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let norm = v.norm();
            v / norm.max(1e-300)
        })
        .collect();

    // caches: q[t][ν] = Q_t^ν w_ν, s[t][ν] = w_νᵀ q[t][ν], e[ν][s] = g_s^ν · w_ν
    let mut q: Vec<Vec<DVector<f64>>> = (0..nt)
        .map(|t| (0..d).map(|nu| apply_vec(terms, t, nu, &w[nu])).collect())
        .collect();
    let mut s: Vec<Vec<f64>> = (0..nt)
        .map(|t| (0..d).map(|nu| w[nu].dot(&q[t][nu])).collect())
        .collect();
    let mut e: Vec<DVector<f64>> = (0..d)
        .map(|nu| g_eff.factor(nu).transpose() * &w[nu])
        .collect();

    let mut prev_obj = f64::INFINITY;
    for _sweep in 0..als.max_sweeps {
        for mu in 0..d {
            let n = dims[mu];
            let mut m = DMatrix::zeros(n, n);
            for t in 0..nt {
                let mut coeff = 1.0;
                for nu in 0..d {
                    if nu != mu {
                        coeff *= s[t][nu];
                    }
                }
                terms.factor(t, mu).add_scaled_to(&mut m, coeff);
            }
            let m = (&m + m.transpose()) * 0.5;
            let mut rhs = DVector::zeros(n);
            for gs in 0..rg {
                let mut coeff = 1.0;
                for nu in 0..d {
                    if nu != mu {
                        coeff *= e[nu][gs];
                    }
                }
                rhs.axpy(coeff, &g_eff.factor(mu).column(gs), 1.0);
            }
            let sol = solve_spd_jittered(&m, &DMatrix::from_column_slice(n, 1, rhs.as_slice()), "rank-one ALS")?;
            w[mu] = DVector::from_column_slice(sol.as_slice());
            for t in 0..nt {
                q[t][mu] = apply_vec(terms, t, mu, &w[mu]);
                s[t][mu] = w[mu].dot(&q[t][mu]);
            }
            e[mu] = g_eff.factor(mu).transpose() * &w[mu];
        }

        // balance factor magnitudes to keep the coefficient products tame
        balance(&mut w);
        for t in 0..nt {
            for nu in 0..d {
                q[t][nu] = apply_vec(terms, t, nu, &w[nu]);
                s[t][nu] = w[nu].dot(&q[t][nu]);
            }
        }
        for nu in 0..d {
            e[nu] = g_eff.factor(nu).transpose() * &w[nu];
        }

        let qww: f64 = (0..nt).map(|t| (0..d).map(|nu| s[t][nu]).product::<f64>()).sum();
        let gw: f64 = (0..rg)
            .map(|gs| (0..d).map(|nu| e[nu][gs]).product::<f64>())
            .sum();
        let obj = qww - 2.0 * gw;
        if (prev_obj - obj).abs() <= als.tol * obj.abs().max(1e-300) {
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }
    let _ = prev_obj;

    CanonicalTensor::rank_one(&w)
}

fn apply_vec(terms: &LowRankOperator, t: usize, mu: usize, v: &DVector<f64>) -> DVector<f64> {
    let m = terms
        .factor(t, mu)
        .matmat(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    DVector::from_column_slice(m.as_slice())
}

fn balance(w: &mut [DVector<f64>]) {
    let norms: Vec<f64> = w.iter().map(|v| v.norm()).collect();
    let prod: f64 = norms.iter().product();
    if prod <= 0.0 || !prod.is_finite() {
        return;
    }
    let target = prod.powf(1.0 / w.len() as f64);
    for (v, &n) in w.iter_mut().zip(&norms) {
        if n > 0.0 {
            *v *= target / n;
        }
    }
}

/// Re-solves every rank term's dimension-`μ` column jointly: the block-SPD
/// system `⟨Q y, δ⟩ = ⟨g, δ⟩` over all variations `δ` of the μ-factors.
/// Never increases the exact objective (asserted in debug builds).
fn dimension_update(
    terms: &LowRankOperator,
    rhs: &CanonicalTensor,
    y: &mut CanonicalTensor,
    mu: usize,
) -> Result<()> {
    let dims: Vec<usize> = terms.row_dims().to_vec();
    let d = dims.len();
    let m = y.rank();
    let n = dims[mu];
    if m == 0 {
        return Ok(());
    }

    #[cfg(debug_assertions)]
    let obj_before = quad_objective(terms, rhs, y)?;

    // per-term cross Grams P_t^ν = Y_νᵀ (Q_t^ν Y_ν), Hadamard-multiplied over ν≠μ
    let nt = terms.num_terms();
    let mut coeff: Vec<DMatrix<f64>> = vec![DMatrix::from_element(m, m, 1.0); nt];
    for (t, ct) in coeff.iter_mut().enumerate() {
        for nu in 0..d {
            if nu == mu {
                continue;
            }
            let p = y.factor(nu).transpose() * terms.factor(t, nu).matmat(y.factor(nu));
            ct.component_mul_assign(&p);
        }
    }

    let mut k = DMatrix::zeros(m * n, m * n);
    for (t, ct) in coeff.iter().enumerate() {
        let q_dense = terms.factor(t, mu).to_dense();
        for i in 0..m {
            for ip in 0..m {
                let c = ct[(i, ip)];
                if c == 0.0 {
                    continue;
                }
                let mut block = k.view_mut((i * n, ip * n), (n, n));
                for col in 0..n {
                    for row in 0..n {
                        block[(row, col)] += c * q_dense[(row, col)];
                    }
                }
            }
        }
    }
    let k = (&k + k.transpose()) * 0.5;

    // rhs blocks: contract g against the fixed factors of every rank term
    let rg = rhs.rank();
    let mut cmat = DMatrix::from_element(m, rg, 1.0);
    for nu in 0..d {
        if nu == mu {
            continue;
        }
        let e = y.factor(nu).transpose() * rhs.factor(nu);
        cmat.component_mul_assign(&e);
    }
    let rhs_mat = rhs.factor(mu) * cmat.transpose(); // n × m
    let mut b = DVector::zeros(m * n);
    for i in 0..m {
        b.rows_mut(i * n, n).copy_from(&rhs_mat.column(i));
    }

    let sol = solve_spd_jittered(&k, &DMatrix::from_column_slice(m * n, 1, b.as_slice()), "dimension update")?;
    let mut v = DMatrix::zeros(n, m);
    for i in 0..m {
        v.column_mut(i).copy_from(&sol.view((i * n, 0), (n, 1)));
    }
    y.replace_factor(mu, v)?;

    #[cfg(debug_assertions)]
    {
        let obj_after = quad_objective(terms, rhs, y)?;
        debug_assert!(
            obj_after <= obj_before + 1e-9 * obj_before.abs().max(1.0),
            "dimension update increased the objective: {obj_before:.6e} -> {obj_after:.6e}"
        );
    }

    Ok(())
}

#[cfg(debug_assertions)]
fn quad_objective(terms: &LowRankOperator, rhs: &CanonicalTensor, y: &CanonicalTensor) -> Result<f64> {
    let identity = RankOneMetric::identity(terms.row_dims());
    let qy = terms.apply(y)?;
    Ok(qy.inner(y, &identity)? - 2.0 * rhs.inner(y, &identity)?)
}
