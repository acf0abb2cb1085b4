//! Canonical low-rank tensors and rank-one metrics on tensor-product spaces.
//!
//! A [`CanonicalTensor`] of order `d` stores one factor matrix per dimension;
//! column `t` across all factors is the `t`-th rank-one term, so the tensor is
//! `Σ_t  v_t^1 ⊗ … ⊗ v_t^d`. Addition concatenates columns, inner products
//! reduce to per-dimension Gram matrices, and nothing is ever compressed
//! implicitly: every rank change is an explicit projection.
//!
//! A [`RankOneMetric`] is an inner product `⟨·,·⟩ = ⊗_μ G_μ` with one SPD Gram
//! per dimension. Identity and diagonal Grams are stored as such so that the
//! common cases stay cheap and exact.
//!
//! Dense expansion uses the row-major flattening `(i_1, …, i_d) ↦
//! ((i_1·n_2 + i_2)·n_3 + …)`, i.e. the first dimension varies slowest. This
//! matches the Kronecker-product convention used in [`crate::operator`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Entry-count guard for dense expansion; beyond this the tensor is treated
/// as intentionally too large to densify.
pub const DENSE_GUARD: usize = 10_000_000;

/// One SPD Gram matrix of a rank-one metric.
pub enum Gram {
    Identity(usize),
    /// Diagonal with strictly positive entries.
    Diagonal(DVector<f64>),
    /// General SPD matrix together with its Cholesky factorization `G = LLᵀ`.
    Dense {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

impl Clone for Gram {
    fn clone(&self) -> Self {
        match self {
            Gram::Identity(n) => Gram::Identity(*n),
            Gram::Diagonal(d) => Gram::Diagonal(d.clone()),
            Gram::Dense { matrix, .. } => Gram::Dense {
                matrix: matrix.clone(),
                chol: Cholesky::new(matrix.clone()).expect("stored Gram stays SPD"),
            },
        }
    }
}

impl std::fmt::Debug for Gram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gram::Identity(n) => write!(f, "Gram::Identity({n})"),
            Gram::Diagonal(d) => write!(f, "Gram::Diagonal(dim {})", d.len()),
            Gram::Dense { matrix, .. } => write!(f, "Gram::Dense(dim {})", matrix.nrows()),
        }
    }
}

impl Gram {
    pub fn dim(&self) -> usize {
        match self {
            Gram::Identity(n) => *n,
            Gram::Diagonal(d) => d.len(),
            Gram::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Gram::Identity(_))
    }

    /// `G · M`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gram::Identity(_) => m.clone(),
            Gram::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Gram::Dense { matrix, .. } => matrix * m,
        }
    }

    /// `G⁻¹ · M`.
    pub fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gram::Identity(_) => m.clone(),
            Gram::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                out
            }
            Gram::Dense { chol, .. } => chol.solve(m),
        }
    }

    /// `F · M` for a factor `F` with `FᵀF = G` (diagonal square root, or the
    /// upper Cholesky factor `Lᵀ`). Transforms metric inner products into
    /// canonical ones: `⟨x, y⟩_G = (Fx)·(Fy)`.
    pub fn sqrt_apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gram::Identity(_) => m.clone(),
            Gram::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i].sqrt();
                }
                out
            }
            Gram::Dense { chol, .. } => chol.l().transpose() * m,
        }
    }

    /// `F⁻¹ · M`, inverse of [`Gram::sqrt_apply`].
    pub fn sqrt_solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gram::Identity(_) => m.clone(),
            Gram::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i].sqrt();
                }
                out
            }
            Gram::Dense { chol, .. } => chol
                .l()
                .transpose()
                .solve_upper_triangular(m)
                .expect("Cholesky factor has positive diagonal"),
        }
    }
}

/// Rank-one (Kronecker-separable) metric `⊗_μ G_μ` on a tensor-product space.
#[derive(Clone, Debug)]
pub struct RankOneMetric {
    grams: Vec<Gram>,
}

impl RankOneMetric {
    pub fn identity(dims: &[usize]) -> Self {
        Self {
            grams: dims.iter().map(|&n| Gram::Identity(n)).collect(),
        }
    }

    /// Builds a metric from per-dimension Grams, validating SPD-ness up front
    /// (positive diagonals; Cholesky for dense blocks).
    pub fn new(grams: Vec<Gram>) -> Result<Self> {
        for (mu, g) in grams.iter().enumerate() {
            match g {
                Gram::Identity(_) => {}
                Gram::Diagonal(d) => {
                    if d.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
                        return Err(Error::NotSpd(format!(
                            "dimension {mu}: diagonal Gram has a non-positive entry"
                        )));
                    }
                }
                Gram::Dense { matrix, .. } => {
                    if matrix.nrows() != matrix.ncols() {
                        return Err(Error::ShapeMismatch(format!(
                            "dimension {mu}: Gram is {}x{}",
                            matrix.nrows(),
                            matrix.ncols()
                        )));
                    }
                }
            }
        }
        Ok(Self { grams })
    }

    /// Wraps a dense symmetric matrix as a Gram, failing if it is not SPD.
    pub fn dense_gram(matrix: DMatrix<f64>) -> Result<Gram> {
        let sym_err = (&matrix - matrix.transpose()).abs().max();
        if sym_err > 1e-12 * matrix.abs().max().max(1e-300) {
            return Err(Error::NotSpd(format!(
                "Gram is not symmetric (max asymmetry {sym_err:.3e})"
            )));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotSpd(format!("{0}x{0} Gram has no Cholesky factorization", matrix.nrows())))?;
        Ok(Gram::Dense { matrix, chol })
    }

    pub fn order(&self) -> usize {
        self.grams.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.grams.iter().map(|g| g.dim()).collect()
    }

    pub fn gram(&self, mu: usize) -> &Gram {
        &self.grams[mu]
    }

    pub fn is_identity(&self) -> bool {
        self.grams.iter().all(|g| g.is_identity())
    }

    /// True when every Gram is identity or diagonal.
    pub fn is_separable_diagonal(&self) -> bool {
        self.grams
            .iter()
            .all(|g| matches!(g, Gram::Identity(_) | Gram::Diagonal(_)))
    }
}

/// Canonical-format tensor: `factors[μ]` is `n_μ × r`, term `t` is the outer
/// product of the `t`-th columns.
#[derive(Clone, Debug)]
pub struct CanonicalTensor {
    factors: Vec<DMatrix<f64>>,
}

impl CanonicalTensor {
    /// The rank-0 tensor (additive identity) with the given mode sizes.
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            factors: dims.iter().map(|&n| DMatrix::zeros(n, 0)).collect(),
        }
    }

    pub fn from_factors(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::OrderMismatch {
                expected: 2,
                got: factors.len(),
            });
        }
        let rank = factors[0].ncols();
        for (mu, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {mu} has {} columns, factor 0 has {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::ShapeMismatch(format!("factor {mu} has zero rows")));
            }
        }
        Ok(Self { factors })
    }

    /// A single rank-one term.
    pub fn rank_one(cols: &[DVector<f64>]) -> Result<Self> {
        Self::from_factors(cols.iter().map(|c| DMatrix::from_column_slice(c.len(), 1, c.as_slice())).collect())
    }

    /// Seeded random tensor with standard normal factor entries.
    pub fn random<R: Rng>(dims: &[usize], rank: usize, rng: &mut R) -> Self {
        let factors = dims
            .iter()
            .map(|&n| DMatrix::from_fn(n, rank, |_, _| standard_normal(rng)))
            .collect();
        Self { factors }
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factor(&self, mu: usize) -> &DMatrix<f64> {
        &self.factors[mu]
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// Replaces the factor of one dimension; the new matrix must keep the
    /// mode size and rank.
    pub fn replace_factor(&mut self, mu: usize, f: DMatrix<f64>) -> Result<()> {
        if f.nrows() != self.factors[mu].nrows() || f.ncols() != self.rank() {
            return Err(Error::ShapeMismatch(format!(
                "replacement factor is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                self.factors[mu].nrows(),
                self.rank()
            )));
        }
        self.factors[mu] = f;
        Ok(())
    }

    /// Sum of two canonical tensors by column concatenation; the result has
    /// rank `rank(a) + rank(b)` with no compression.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!(
                "adding tensors with dims {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| {
                let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
                m.columns_mut(0, a.ncols()).copy_from(a);
                m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
                m
            })
            .collect();
        Ok(Self { factors })
    }

    /// Scalar multiple; the scaling is absorbed into the first factor.
    pub fn scale(&self, s: f64) -> Self {
        let mut factors = self.factors.clone();
        factors[0] *= s;
        Self { factors }
    }

    /// Metric inner product `⟨a, b⟩ = Σ_{s,t} Π_μ (a_s^μ)ᵀ G_μ b_t^μ`.
    pub fn inner(&self, other: &Self, metric: &RankOneMetric) -> Result<f64> {
        Ok(self.inner_with_scale(other, metric)?.0)
    }

    /// Inner product plus the sum of absolute term contributions, which
    /// bounds the round-off mass and calibrates the negativity tolerance in
    /// [`CanonicalTensor::norm`].
    fn inner_with_scale(&self, other: &Self, metric: &RankOneMetric) -> Result<(f64, f64)> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!(
                "inner product of tensors with dims {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        if metric.dims() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "metric dims {:?} do not match tensor dims {:?}",
                metric.dims(),
                self.dims()
            )));
        }
        let (ra, rb) = (self.rank(), other.rank());
        if ra == 0 || rb == 0 {
            return Ok((0.0, 0.0));
        }
        let mut s = DMatrix::from_element(ra, rb, 1.0);
        for mu in 0..self.order() {
            let p = self.factors[mu].transpose() * metric.gram(mu).apply(&other.factors[mu]);
            s.component_mul_assign(&p);
        }
        Ok((s.sum(), s.abs().sum()))
    }

    /// Metric norm. A slightly negative `⟨a, a⟩` from round-off is clamped to
    /// zero; a negative value beyond `1e-14` of the term mass means the metric
    /// is broken and raises an error instead of returning NaN.
    ///
    /// The norm is evaluated in factored form, so differences of nearly equal
    /// tensors are resolved only down to roughly `√ε` of the term mass.
    /// Comparisons at tighter tolerances must densify first.
    pub fn norm(&self, metric: &RankOneMetric) -> Result<f64> {
        let (val, scale) = self.inner_with_scale(self, metric)?;
        if val < -1e-14 * scale {
            return Err(Error::NumericalBreakdown(format!(
                "squared norm {val:.3e} is negative beyond round-off (term mass {scale:.3e})"
            )));
        }
        Ok(val.max(0.0).sqrt())
    }

    /// Number of entries of the dense expansion.
    pub fn dense_len(&self) -> usize {
        self.factors.iter().map(|f| f.nrows()).product()
    }

    /// Dense expansion in row-major flattening (first index slowest).
    /// Guarded: tensors beyond [`DENSE_GUARD`] entries refuse to densify.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let total = self.dense_len();
        if total > DENSE_GUARD {
            return Err(Error::GuardExceeded {
                what: "dense tensor expansion",
                size: total,
                guard: DENSE_GUARD,
            });
        }
        let r = self.rank();
        if r == 0 {
            return Ok(vec![0.0; total]);
        }
        // block[i, t] accumulates the partial outer product over leading dims
        let mut block = self.factors[0].clone();
        for f in &self.factors[1..] {
            let (rows, n) = (block.nrows(), f.nrows());
            let mut next = DMatrix::zeros(rows * n, r);
            for t in 0..r {
                for i in 0..rows {
                    let bi = block[(i, t)];
                    for j in 0..n {
                        next[(i * n + j, t)] = bi * f[(j, t)];
                    }
                }
            }
            block = next;
        }
        let mut out = vec![0.0; total];
        for t in 0..r {
            for i in 0..total {
                out[i] += block[(i, t)];
            }
        }
        Ok(out)
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller keeps the dependency surface small and is plenty here
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Supported tensor formats. Only the canonical format is implemented; the
/// enum keeps the configuration surface explicit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorFamily {
    Canonical,
}

/// How a best-approximation projection onto a rank-`r` set is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectorKind {
    /// Exact weighted SVD truncation; order-2 tensors only.
    Svd2d,
    /// Greedy rank-one initialization followed by cyclic ALS sweeps.
    Als,
    /// Successive best rank-one corrections without joint re-optimization.
    GreedyRankOne,
}

/// Target low-rank set `S_X` together with the projection algorithm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FormatSpec {
    pub family: TensorFamily,
    pub target_rank: usize,
    pub projector: ProjectorKind,
}

impl FormatSpec {
    pub fn svd2d(target_rank: usize) -> Self {
        Self {
            family: TensorFamily::Canonical,
            target_rank,
            projector: ProjectorKind::Svd2d,
        }
    }

    pub fn als(target_rank: usize) -> Self {
        Self {
            family: TensorFamily::Canonical,
            target_rank,
            projector: ProjectorKind::Als,
        }
    }

    pub fn greedy_rank_one(target_rank: usize) -> Self {
        Self {
            family: TensorFamily::Canonical,
            target_rank,
            projector: ProjectorKind::GreedyRankOne,
        }
    }
}

/// Best rank-`r` approximation of an order-2 tensor in a rank-one metric.
///
/// The weighted problem is reduced to a canonical SVD by the square-root
/// transform `M̃ = F_1 M F_2ᵀ` with `F_μᵀ F_μ = G_μ`; thin QR of the
/// transformed factors keeps the SVD at size `rank × rank`. The projection is
/// orthogonal in the metric, so `‖a‖² = ‖a_r‖² + ‖a − a_r‖²`.
///
/// Sign convention for reproducibility: each left singular vector is flipped
/// so its largest-magnitude entry is positive (ties break to the lowest
/// index), with the matching right vector flipped alongside.
pub fn svd2d_project(a: &CanonicalTensor, r: usize, metric: &RankOneMetric) -> Result<CanonicalTensor> {
    if a.order() != 2 {
        return Err(Error::OrderMismatch {
            expected: 2,
            got: a.order(),
        });
    }
    if metric.dims() != a.dims() {
        return Err(Error::ShapeMismatch(format!(
            "metric dims {:?} do not match tensor dims {:?}",
            metric.dims(),
            a.dims()
        )));
    }
    let dims = a.dims();
    if r == 0 || a.rank() == 0 {
        return Ok(CanonicalTensor::zeros(&dims));
    }

    let qa = metric.gram(0).sqrt_apply(a.factor(0)).qr();
    let qb = metric.gram(1).sqrt_apply(a.factor(1)).qr();
    let c = qa.r() * qb.r().transpose();
    let svd = c.svd(true, true);
    let (cu, cv_t, sigma) = (
        svd.u.as_ref().expect("u requested"),
        svd.v_t.as_ref().expect("v_t requested"),
        &svd.singular_values,
    );

    let keep = sigma.iter().take(r).filter(|&&s| s > 0.0).count();
    if keep == 0 {
        return Ok(CanonicalTensor::zeros(&dims));
    }

    let mut u = qa.q() * cu.columns(0, keep);
    let mut v = qb.q() * cv_t.rows(0, keep).transpose();
    for t in 0..keep {
        let col = u.column(t);
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(t).neg_mut();
            v.column_mut(t).neg_mut();
        }
    }
    for t in 0..keep {
        u.column_mut(t).scale_mut(sigma[t]);
    }

    CanonicalTensor::from_factors(vec![
        metric.gram(0).sqrt_solve(&u),
        metric.gram(1).sqrt_solve(&v),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense Kronecker expansion of a rank-one metric, for oracle checks.
    fn dense_metric(metric: &RankOneMetric) -> DMatrix<f64> {
        let mut out = DMatrix::from_element(1, 1, 1.0);
        for mu in 0..metric.order() {
            let n = metric.gram(mu).dim();
            let g = metric.gram(mu).apply(&DMatrix::identity(n, n));
            out = out.kronecker(&g);
        }
        out
    }

    fn dense_vec(t: &CanonicalTensor) -> DVector<f64> {
        DVector::from_vec(t.to_dense().unwrap())
    }

    fn random_metric(dims: &[usize], seed: u64) -> RankOneMetric {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grams = dims
            .iter()
            .enumerate()
            .map(|(mu, &n)| match mu % 3 {
                0 => Gram::Identity(n),
                1 => Gram::Diagonal(DVector::from_fn(n, |_, _| 0.2 + rng.random::<f64>())),
                _ => {
                    let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
                    RankOneMetric::dense_gram(&b * b.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
                }
            })
            .collect();
        RankOneMetric::new(grams).unwrap()
    }

    #[test]
    fn dense_expansion_of_handwritten_rank_one() {
        // (1,2) ⊗ (3,4,5): flat layout is [3,4,5, 6,8,10]
        let t = CanonicalTensor::rank_one(&[
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0, 5.0]),
        ])
        .unwrap();
        assert_eq!(t.to_dense().unwrap(), vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn dense_expansion_order_three() {
        // (1,2) ⊗ (1,0) ⊗ (1,1) has entries at flattened (i,0,k) only
        let t = CanonicalTensor::rank_one(&[
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(t.to_dense().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_rank_tensor_is_additive_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CanonicalTensor::random(&[3, 4], 2, &mut rng);
        let z = CanonicalTensor::zeros(&[3, 4]);
        let sum = a.add(&z).unwrap();
        assert_eq!(sum.rank(), 2);
        assert_eq!(dense_vec(&sum), dense_vec(&a));
        let m = RankOneMetric::identity(&[3, 4]);
        assert_eq!(z.norm(&m).unwrap(), 0.0);
        assert_eq!(z.inner(&a, &m).unwrap(), 0.0);
    }

    #[test]
    fn dense_guard_fires_before_allocation() {
        let t = CanonicalTensor::zeros(&[4000, 4000]);
        match t.to_dense() {
            Err(Error::GuardExceeded { size, guard, .. }) => {
                assert_eq!(size, 16_000_000);
                assert_eq!(guard, DENSE_GUARD);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn metric_construction_rejects_non_spd() {
        assert!(RankOneMetric::new(vec![Gram::Diagonal(DVector::from_vec(vec![1.0, -2.0]))]).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(RankOneMetric::dense_gram(indefinite).is_err());
        let asymmetric = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert!(RankOneMetric::dense_gram(asymmetric).is_err());
    }

    #[test]
    fn gram_sqrt_factors_reproduce_the_metric() {
        let m = random_metric(&[3, 4, 5], 17);
        for mu in 0..3 {
            let g = m.gram(mu);
            let n = g.dim();
            let eye = DMatrix::identity(n, n);
            let f = g.sqrt_apply(&eye);
            let gd = g.apply(&eye);
            assert!((f.transpose() * &f - &gd).abs().max() < 1e-12);
            let back = g.sqrt_solve(&f);
            assert!((&back - &eye).abs().max() < 1e-12);
        }
    }

    #[test]
    fn svd2d_requires_order_two() {
        let t = CanonicalTensor::zeros(&[2, 2, 2]);
        let m = RankOneMetric::identity(&[2, 2, 2]);
        assert!(matches!(
            svd2d_project(&t, 1, &m),
            Err(Error::OrderMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn svd2d_matches_dense_svd_oracle_in_identity_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = CanonicalTensor::random(&[8, 6], 5, &mut rng);
        let dense = DMatrix::from_fn(8, 6, |i, j| dense_vec(&a)[i * 6 + j]);
        let svd = dense.clone().svd(true, true);
        for r in 1..=4 {
            let proj = svd2d_project(&a, r, &RankOneMetric::identity(&[8, 6])).unwrap();
            let mut oracle = DMatrix::zeros(8, 6);
            for t in 0..r {
                let u = svd.u.as_ref().unwrap().column(t);
                let v = svd.v_t.as_ref().unwrap().row(t);
                oracle += svd.singular_values[t] * u * v;
            }
            let got = proj.factor(0) * proj.factor(1).transpose();
            assert!(
                (&got - &oracle).norm() <= 1e-10 * oracle.norm(),
                "rank-{r} projection deviates from dense SVD oracle"
            );
        }
    }

    #[test]
    fn svd2d_projection_is_orthogonal_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CanonicalTensor::random(&[7, 9], 6, &mut rng);
        let metric = random_metric(&[7, 9], 23);
        let r = 3;
        let p = svd2d_project(&a, r, &metric).unwrap();
        assert!(p.rank() <= r);

        let norm_a = a.norm(&metric).unwrap();
        let norm_p = p.norm(&metric).unwrap();
        let err = a.add(&p.scale(-1.0)).unwrap().norm(&metric).unwrap();
        let pyth = (norm_a.powi(2) - norm_p.powi(2) - err.powi(2)).abs();
        assert!(pyth <= 1e-12 * norm_a.powi(2), "Pythagoras violated by {pyth:.3e}");

        let pp = svd2d_project(&p, r, &metric).unwrap();
        let drift = p.add(&pp.scale(-1.0)).unwrap().norm(&metric).unwrap();
        assert!(drift <= 1e-10 * norm_p, "projection is not idempotent: {drift:.3e}");
    }

    /// Dense-side metric distance, immune to the cancellation floor of the
    /// factored norm.
    fn dense_metric_dist(a: &CanonicalTensor, b: &CanonicalTensor, m: &RankOneMetric) -> f64 {
        let d = dense_vec(a) - dense_vec(b);
        (d.transpose() * dense_metric(m) * &d)[(0, 0)].max(0.0).sqrt()
    }

    #[test]
    fn svd2d_recovers_exact_rank_and_full_rank_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let identity = RankOneMetric::identity(&[6, 5]);
        let a = CanonicalTensor::random(&[6, 5], 2, &mut rng);
        let norm_a = a.norm(&identity).unwrap();
        // target rank above the true rank reproduces the input
        let p = svd2d_project(&a, 4, &identity).unwrap();
        let err = dense_metric_dist(&a, &p, &identity);
        assert!(err <= 1e-12 * norm_a, "rank-overshoot recovery error {:.3e}", err / norm_a);
        // target rank = min(dims) reproduces any input
        let b = CanonicalTensor::random(&[6, 5], 9, &mut rng);
        let pb = svd2d_project(&b, 5, &identity).unwrap();
        let err_b = dense_metric_dist(&b, &pb, &identity);
        assert!(err_b <= 1e-12 * b.norm(&identity).unwrap());
        let metric = random_metric(&[6, 5], 31);
        let pw = svd2d_project(&b, 5, &metric).unwrap();
        let err_w = dense_metric_dist(&b, &pw, &metric);
        assert!(
            err_w <= 1e-12 * b.norm(&metric).unwrap(),
            "weighted full-rank recovery error {:.3e}",
            err_w / b.norm(&metric).unwrap()
        );
    }

    #[test]
    fn svd2d_sign_convention_is_representation_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = CanonicalTensor::random(&[6, 7], 3, &mut rng);
        // same tensor, different factor representation: flip term signs and permute columns
        let perm = [2usize, 0, 1];
        let f0 = DMatrix::from_fn(6, 3, |i, t| -a.factor(0)[(i, perm[t])]);
        let f1 = DMatrix::from_fn(7, 3, |i, t| -a.factor(1)[(i, perm[t])]);
        let b = CanonicalTensor::from_factors(vec![f0, f1]).unwrap();

        let metric = random_metric(&[6, 7], 41);
        let pa = svd2d_project(&a, 2, &metric).unwrap();
        let pb = svd2d_project(&b, 2, &metric).unwrap();
        for mu in 0..2 {
            assert!(
                (pa.factor(mu) - pb.factor(mu)).abs().max() < 1e-9,
                "factor {mu} differs between representations of the same tensor"
            );
        }
    }

    #[test]
    fn svd2d_rank_zero_targets_and_inputs() {
        let m = RankOneMetric::identity(&[4, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = CanonicalTensor::random(&[4, 3], 2, &mut rng);
        assert_eq!(svd2d_project(&a, 0, &m).unwrap().rank(), 0);
        let z = CanonicalTensor::zeros(&[4, 3]);
        assert_eq!(svd2d_project(&z, 2, &m).unwrap().rank(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn add_concatenates_and_matches_dense(seed in 0u64..1000, order in 2usize..4, ra in 0usize..3, rb in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims: Vec<usize> = (0..order).map(|mu| 2 + (seed as usize + mu) % 3).collect();
            let a = CanonicalTensor::random(&dims, ra, &mut rng);
            let b = CanonicalTensor::random(&dims, rb, &mut rng);
            let sum = a.add(&b).unwrap();
            prop_assert_eq!(sum.rank(), ra + rb);
            let dense_sum = dense_vec(&a) + dense_vec(&b);
            prop_assert!((dense_vec(&sum) - dense_sum).abs().max() < 1e-12);
        }

        #[test]
        fn inner_matches_dense_quadratic_form(seed in 0u64..1000, order in 2usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims: Vec<usize> = (0..order).map(|mu| 2 + (seed as usize + 2 * mu) % 3).collect();
            let a = CanonicalTensor::random(&dims, 1 + (seed as usize) % 3, &mut rng);
            let b = CanonicalTensor::random(&dims, 1 + (seed as usize) % 2, &mut rng);
            let metric = random_metric(&dims, seed.wrapping_mul(7919));
            let got = a.inner(&b, &metric).unwrap();
            let oracle = (dense_vec(&a).transpose() * dense_metric(&metric) * dense_vec(&b))[(0, 0)];
            prop_assert!((got - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()));
            let sym = b.inner(&a, &metric).unwrap();
            prop_assert!((got - sym).abs() <= 1e-10 * (1.0 + got.abs()));
        }

        #[test]
        fn norm_is_consistent_with_inner_and_scaling(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [3usize, 4, 2];
            let a = CanonicalTensor::random(&dims, 2, &mut rng);
            let metric = random_metric(&dims, seed ^ 0xabcd);
            let n = a.norm(&metric).unwrap();
            let ip = a.inner(&a, &metric).unwrap();
            prop_assert!((n * n - ip).abs() <= 1e-10 * (1.0 + ip.abs()));
            let s = -2.5;
            let ns = a.scale(s).norm(&metric).unwrap();
            prop_assert!((ns - s.abs() * n).abs() <= 1e-10 * (1.0 + n));
        }

        #[test]
        fn svd2d_error_is_monotone_in_rank(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = CanonicalTensor::random(&[6, 5], 4, &mut rng);
            let metric = random_metric(&[6, 5], seed ^ 0x55);
            let norm_a = a.norm(&metric).unwrap();
            let mut prev = f64::INFINITY;
            for r in 1..=4 {
                let p = svd2d_project(&a, r, &metric).unwrap();
                let err = a.add(&p.scale(-1.0)).unwrap().norm(&metric).unwrap();
                prop_assert!(err <= prev + 1e-12 * norm_a, "error increased from rank {} to {}", r - 1, r);
                prev = err;
            }
        }
    }
}
