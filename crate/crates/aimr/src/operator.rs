//! Kronecker-structured low-rank operators and the dual residual metric.
//!
//! An operator `A : ⊗ R^{m_μ} → ⊗ R^{n_μ}` is a sum of elementary terms
//! `A = Σ_t  A_t^1 ⊗ … ⊗ A_t^d`. Applying it to a canonical tensor maps each
//! rank-one term through each elementary term, so ranks multiply
//! (`rank(Av) = terms · rank(v)`) and are never compressed implicitly.
//!
//! [`DualMetric`] represents `R_Y = A R_X⁻¹ A*`, the metric on residual space
//! under which the minimal-residual iteration map is perfectly conditioned.
//! It is either materialized term by term (`B_{ij}^μ = A_i^μ G_μ⁻¹ (A_j^μ)ᵀ`,
//! squaring the term count) or applied implicitly as the composition
//! `A ∘ R_X⁻¹ ∘ A*`.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::linalg::{LuSolver, SpdSolver};
use crate::tensor::{CanonicalTensor, Gram, RankOneMetric};
use crate::{Error, Result};

/// Density above which a sparse factor is stored densely instead.
pub const DENSIFY_FILL: f64 = 0.25;

/// Unknown-count guard for dense diagnostic expansions of operators.
pub const DENSE_UNKNOWNS_GUARD: usize = 20_000;

/// One factor matrix of an elementary operator term.
#[derive(Clone, Debug)]
pub enum Factor {
    Dense(DMatrix<f64>),
    /// CSR storage; kept sparse only below [`DENSIFY_FILL`].
    Sparse(CsMat<f64>),
}

impl Factor {
    /// Wraps a sparse matrix, densifying above the fill threshold.
    pub fn sparse(m: CsMat<f64>) -> Self {
        let m = if m.is_csr() { m } else { m.to_csr() };
        let fill = m.nnz() as f64 / (m.rows() * m.cols()).max(1) as f64;
        if fill > DENSIFY_FILL {
            Factor::Dense(csr_to_dense(&m))
        } else {
            Factor::Sparse(m)
        }
    }

    pub fn dense(m: DMatrix<f64>) -> Self {
        Factor::Dense(m)
    }

    pub fn identity(n: usize) -> Self {
        Factor::Sparse(CsMat::eye(n))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Factor::Dense(m) => (m.nrows(), m.ncols()),
            Factor::Sparse(m) => (m.rows(), m.cols()),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Factor::Dense(m) => m.len(),
            Factor::Sparse(m) => m.nnz(),
        }
    }

    /// `F · M` for a dense block of columns.
    pub fn matmat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Dense(f) => f * m,
            Factor::Sparse(f) => {
                let mut out = DMatrix::zeros(f.rows(), m.ncols());
                for (row, vec) in f.outer_iterator().enumerate() {
                    for (col, &v) in vec.iter() {
                        for k in 0..m.ncols() {
                            out[(row, k)] += v * m[(col, k)];
                        }
                    }
                }
                out
            }
        }
    }

    /// `Fᵀ · M`.
    pub fn tr_matmat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Dense(f) => f.transpose() * m,
            Factor::Sparse(f) => {
                let mut out = DMatrix::zeros(f.cols(), m.ncols());
                for (row, vec) in f.outer_iterator().enumerate() {
                    for (col, &v) in vec.iter() {
                        for k in 0..m.ncols() {
                            out[(col, k)] += v * m[(row, k)];
                        }
                    }
                }
                out
            }
        }
    }

    pub fn transpose(&self) -> Factor {
        match self {
            Factor::Dense(m) => Factor::Dense(m.transpose()),
            Factor::Sparse(m) => Factor::Sparse(m.transpose_view().to_csr()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Factor::Dense(m) => m.clone(),
            Factor::Sparse(m) => csr_to_dense(m),
        }
    }

    pub fn scale(&self, s: f64) -> Factor {
        match self {
            Factor::Dense(m) => Factor::Dense(m * s),
            Factor::Sparse(m) => {
                let mut m = m.clone();
                m.scale(s);
                Factor::Sparse(m)
            }
        }
    }

    /// Accumulates `s · F` into a dense matrix.
    pub fn add_scaled_to(&self, out: &mut DMatrix<f64>, s: f64) {
        match self {
            Factor::Dense(m) => *out += m * s,
            Factor::Sparse(m) => {
                for (row, vec) in m.outer_iterator().enumerate() {
                    for (col, &v) in vec.iter() {
                        out[(row, col)] += s * v;
                    }
                }
            }
        }
    }
}

fn csr_to_dense(m: &CsMat<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.rows(), m.cols());
    for (row, vec) in m.outer_iterator().enumerate() {
        for (col, &v) in vec.iter() {
            out[(row, col)] = v;
        }
    }
    out
}

/// `a · b`, staying sparse when both inputs are sparse.
fn mul_factors(a: &Factor, b: &Factor) -> Factor {
    match (a, b) {
        (Factor::Sparse(sa), Factor::Sparse(sb)) => Factor::sparse(&(sa.view()) * &(sb.view())),
        (Factor::Sparse(_), Factor::Dense(db)) => Factor::Dense(a.matmat(db)),
        (Factor::Dense(da), Factor::Sparse(_)) => Factor::Dense(b.tr_matmat(&da.transpose()).transpose()),
        (Factor::Dense(da), Factor::Dense(db)) => Factor::Dense(da * db),
    }
}

/// `G⁻¹ · F` column-wise; diagonal Grams preserve sparsity.
fn gram_solve_factor(g: &Gram, f: &Factor) -> Factor {
    match (g, f) {
        (Gram::Identity(_), _) => f.clone(),
        (Gram::Diagonal(d), Factor::Sparse(m)) => {
            let mut m = m.clone();
            for (row, mut vec) in m.outer_iterator_mut().enumerate() {
                for (_, v) in vec.iter_mut() {
                    *v /= d[row];
                }
            }
            Factor::Sparse(m)
        }
        (_, _) => Factor::Dense(g.solve(&f.to_dense())),
    }
}

/// Low-rank Kronecker-structured operator `Σ_t ⊗_μ A_t^μ`.
#[derive(Clone, Debug)]
pub struct LowRankOperator {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    terms: Vec<Vec<Factor>>,
}

impl LowRankOperator {
    pub fn new(terms: Vec<Vec<Factor>>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidConfig("operator needs at least one term".into()));
        }
        let order = terms[0].len();
        if order < 2 {
            return Err(Error::OrderMismatch { expected: 2, got: order });
        }
        let row_dims: Vec<usize> = terms[0].iter().map(|f| f.shape().0).collect();
        let col_dims: Vec<usize> = terms[0].iter().map(|f| f.shape().1).collect();
        for (t, term) in terms.iter().enumerate() {
            if term.len() != order {
                return Err(Error::ShapeMismatch(format!(
                    "term {t} has order {}, term 0 has {order}",
                    term.len()
                )));
            }
            for (mu, f) in term.iter().enumerate() {
                if f.shape() != (row_dims[mu], col_dims[mu]) {
                    return Err(Error::ShapeMismatch(format!(
                        "term {t} factor {mu} is {:?}, expected {:?}",
                        f.shape(),
                        (row_dims[mu], col_dims[mu])
                    )));
                }
            }
        }
        Ok(Self { row_dims, col_dims, terms })
    }

    pub fn order(&self) -> usize {
        self.row_dims.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn terms(&self) -> &[Vec<Factor>] {
        &self.terms
    }

    pub fn factor(&self, term: usize, mu: usize) -> &Factor {
        &self.terms[term][mu]
    }

    /// `A v` in canonical format; `rank(Av) = num_terms · rank(v)`.
    pub fn apply(&self, v: &CanonicalTensor) -> Result<CanonicalTensor> {
        if v.dims() != self.col_dims {
            return Err(Error::ShapeMismatch(format!(
                "operator column dims {:?} vs tensor dims {:?}",
                self.col_dims,
                v.dims()
            )));
        }
        let r = v.rank();
        if r == 0 {
            return Ok(CanonicalTensor::zeros(&self.row_dims));
        }
        let factors = (0..self.order())
            .map(|mu| {
                let mut out = DMatrix::zeros(self.row_dims[mu], self.terms.len() * r);
                for (t, term) in self.terms.iter().enumerate() {
                    out.columns_mut(t * r, r).copy_from(&term[mu].matmat(v.factor(mu)));
                }
                out
            })
            .collect();
        CanonicalTensor::from_factors(factors)
    }

    /// The adjoint operator (all factors transposed).
    pub fn adjoint(&self) -> LowRankOperator {
        LowRankOperator {
            row_dims: self.col_dims.clone(),
            col_dims: self.row_dims.clone(),
            terms: self
                .terms
                .iter()
                .map(|term| term.iter().map(Factor::transpose).collect())
                .collect(),
        }
    }

    pub fn rows_total(&self) -> usize {
        self.row_dims.iter().product()
    }

    pub fn cols_total(&self) -> usize {
        self.col_dims.iter().product()
    }

    /// Dense matrix of the flattened operator; diagnostic use only, guarded
    /// by [`DENSE_UNKNOWNS_GUARD`] on both sides.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let (rows, cols) = (self.rows_total(), self.cols_total());
        for (what, size) in [("dense operator rows", rows), ("dense operator cols", cols)] {
            if size > DENSE_UNKNOWNS_GUARD {
                return Err(Error::GuardExceeded {
                    what,
                    size,
                    guard: DENSE_UNKNOWNS_GUARD,
                });
            }
        }
        let mut out = DMatrix::zeros(rows, cols);
        for term in &self.terms {
            let mut kron = DMatrix::from_element(1, 1, 1.0);
            for f in term {
                kron = kron.kronecker(&f.to_dense());
            }
            out += kron;
        }
        Ok(out)
    }
}

/// `R_X⁻¹ v`, factor by factor.
pub fn metric_solve(rx: &RankOneMetric, v: &CanonicalTensor) -> Result<CanonicalTensor> {
    if rx.dims() != v.dims() {
        return Err(Error::ShapeMismatch(format!(
            "metric dims {:?} vs tensor dims {:?}",
            rx.dims(),
            v.dims()
        )));
    }
    if v.rank() == 0 {
        return Ok(v.clone());
    }
    let factors = (0..v.order()).map(|mu| rx.gram(mu).solve(v.factor(mu))).collect();
    CanonicalTensor::from_factors(factors)
}

/// How the dual metric is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualMode {
    /// `R_Y` stored as `r_A²` explicit Kronecker terms.
    Materialized,
    /// `R_Y y` evaluated as `A(R_X⁻¹(A* y))`.
    Implicit,
}

/// The ideal residual metric `R_Y = A R_X⁻¹ A*` on the range space of `A`.
pub struct DualMetric {
    a: Arc<LowRankOperator>,
    a_adj: LowRankOperator,
    rx: Arc<RankOneMetric>,
    mode: DualMode,
    materialized: Option<LowRankOperator>,
    /// Per-dimension terms for reduced-system assembly; built on first use
    /// when the apply mode is implicit.
    reduced: OnceLock<LowRankOperator>,
}

impl DualMetric {
    /// Default mode rule: materialize when every `G_μ` is identity or
    /// diagonal, so the triple products stay cheap and (with the fill
    /// heuristic in [`Factor::sparse`]) keep sparse factors sparse.
    pub fn auto_mode(rx: &RankOneMetric) -> DualMode {
        if rx.is_separable_diagonal() {
            DualMode::Materialized
        } else {
            DualMode::Implicit
        }
    }

    pub fn new(a: Arc<LowRankOperator>, rx: Arc<RankOneMetric>, mode: DualMode) -> Result<Self> {
        if rx.dims() != a.col_dims() {
            return Err(Error::ShapeMismatch(format!(
                "solution metric dims {:?} vs operator column dims {:?}",
                rx.dims(),
                a.col_dims()
            )));
        }
        let materialized = match mode {
            DualMode::Materialized => Some(materialize_dual(&a, &rx)?),
            DualMode::Implicit => None,
        };
        Ok(Self {
            a_adj: a.adjoint(),
            a,
            rx,
            mode,
            materialized,
            reduced: OnceLock::new(),
        })
    }

    pub fn auto(a: Arc<LowRankOperator>, rx: Arc<RankOneMetric>) -> Result<Self> {
        let mode = Self::auto_mode(&rx);
        Self::new(a, rx, mode)
    }

    pub fn mode(&self) -> DualMode {
        self.mode
    }

    pub fn operator(&self) -> &Arc<LowRankOperator> {
        &self.a
    }

    pub fn solution_metric(&self) -> &Arc<RankOneMetric> {
        &self.rx
    }

    /// Dimensions of the residual space `Y`.
    pub fn dims(&self) -> Vec<usize> {
        self.a.row_dims().to_vec()
    }

    /// `R_Y y`. Materialized: one operator apply with `r_A²` terms.
    /// Implicit: `A (R_X⁻¹ (A* y))`, rank `r_A² · rank(y)` either way.
    pub fn apply(&self, y: &CanonicalTensor) -> Result<CanonicalTensor> {
        match &self.materialized {
            Some(op) => op.apply(y),
            None => self.a.apply(&metric_solve(&self.rx, &self.a_adj.apply(y)?)?),
        }
    }

    /// `A* y` (the adjoint applied to a residual-space tensor).
    pub fn adjoint_apply(&self, y: &CanonicalTensor) -> Result<CanonicalTensor> {
        self.a_adj.apply(y)
    }

    /// The explicit Kronecker terms of `R_Y`, materializing them on first use
    /// if the apply mode is implicit. Reduced ALS systems are assembled from
    /// these per-dimension blocks.
    pub fn terms_op(&self) -> Result<&LowRankOperator> {
        if let Some(op) = &self.materialized {
            return Ok(op);
        }
        if let Some(op) = self.reduced.get() {
            return Ok(op);
        }
        let op = materialize_dual(&self.a, &self.rx)?;
        Ok(self.reduced.get_or_init(|| op))
    }

    /// `⟨R_Y x, z⟩` (equals `⟨x, z⟩_Y`).
    pub fn inner(&self, x: &CanonicalTensor, z: &CanonicalTensor) -> Result<f64> {
        let identity = RankOneMetric::identity(&self.dims());
        self.apply(x)?.inner(z, &identity)
    }

    /// `‖x‖_Y`, clamping round-off negativity and failing on anything worse.
    pub fn norm(&self, x: &CanonicalTensor) -> Result<f64> {
        let identity = RankOneMetric::identity(&self.dims());
        let qx = self.apply(x)?;
        let ip = qx.inner(x, &identity)?;
        let bound = qx.norm(&identity)? * x.norm(&identity)?;
        if ip < -1e-12 * bound {
            return Err(Error::NumericalBreakdown(format!(
                "dual metric produced negative squared norm {ip:.3e}"
            )));
        }
        Ok(ip.max(0.0).sqrt())
    }
}

/// Builds the explicit terms `B_{ij}^μ = A_i^μ G_μ⁻¹ (A_j^μ)ᵀ`.
fn materialize_dual(a: &LowRankOperator, rx: &RankOneMetric) -> Result<LowRankOperator> {
    let mut terms = Vec::with_capacity(a.num_terms() * a.num_terms());
    for i in 0..a.num_terms() {
        for j in 0..a.num_terms() {
            let term = (0..a.order())
                .map(|mu| {
                    let right = gram_solve_factor(rx.gram(mu), &a.factor(j, mu).transpose());
                    mul_factors(a.factor(i, mu), &right)
                })
                .collect();
            terms.push(term);
        }
    }
    LowRankOperator::new(terms)
}

/// Builds the normal-equation operator `A*A` (the classical-metric analogue
/// of the dual metric), with terms `(A_i^μ)ᵀ A_j^μ`.
pub fn normal_operator(a: &LowRankOperator) -> Result<LowRankOperator> {
    let mut terms = Vec::with_capacity(a.num_terms() * a.num_terms());
    for i in 0..a.num_terms() {
        for j in 0..a.num_terms() {
            let term = (0..a.order())
                .map(|mu| mul_factors(&a.factor(i, mu).transpose(), a.factor(j, mu)))
                .collect();
            terms.push(term);
        }
    }
    LowRankOperator::new(terms)
}

/// Extreme generalized singular values of `A` between `(X, R_X)` and the
/// residual norm determined by `ry` (`None` means the canonical 2-norm).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

/// Dense diagnostic eigencomputation of the operator's frame bounds
/// `α ‖v‖_X ≤ ‖Av‖_{Y'} ≤ β ‖v‖_X`; guard-sized instances only.
///
/// With the ideal dual metric the three numbers are exactly 1.
pub fn spectral_bounds(
    a: &LowRankOperator,
    rx: &RankOneMetric,
    ry: Option<&DualMetric>,
) -> Result<SpectralBounds> {
    let a_d = a.to_dense()?;
    let n = a_d.ncols();

    // dense Kronecker expansions of the metric and its square-root factor
    let mut gx = DMatrix::from_element(1, 1, 1.0);
    let mut fx = DMatrix::from_element(1, 1, 1.0);
    for mu in 0..rx.order() {
        let dim = rx.gram(mu).dim();
        let eye = DMatrix::identity(dim, dim);
        gx = gx.kronecker(&rx.gram(mu).apply(&eye));
        fx = fx.kronecker(&rx.gram(mu).sqrt_apply(&eye));
    }

    // M = Aᵀ R_Y⁻¹ A
    let m = match ry {
        None => a_d.transpose() * &a_d,
        Some(dual) => {
            let ry_dense = match dual.terms_op() {
                Ok(op) => op.to_dense()?,
                Err(_) => {
                    let gx_solver = LuSolver::new(&gx);
                    &a_d * gx_solver.solve_mat(&a_d.transpose())
                }
            };
            let ry_chol = SpdSolver::new(&ry_dense)
                .map_err(|_| Error::NumericalBreakdown("dual metric is not positive definite".into()))?;
            a_d.transpose() * ry_chol.solve_mat(&a_d)
        }
    };

    // T = F⁻ᵀ M F⁻¹ shares the generalized spectrum of (M, G_X)
    let f_lu = LuSolver::new(&fx);
    let t = f_lu.solve_transpose_mat(&f_lu.solve_transpose_mat(&m).transpose());
    let t = (&t + t.transpose()) * 0.5;
    let (lo, hi) = crate::linalg::sym_eig_range(&t)?;
    if hi <= 0.0 {
        return Err(Error::NumericalBreakdown(format!(
            "operator frame bounds collapsed (λmax = {hi:.3e})"
        )));
    }
    let alpha = lo.max(0.0).sqrt();
    let beta = hi.sqrt();
    let kappa = if alpha > 0.0 { beta / alpha } else { f64::INFINITY };
    let _ = n;
    Ok(SpectralBounds { alpha, beta, kappa })
}
