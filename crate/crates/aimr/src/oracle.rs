//! Dense cross-checking oracle for guard-sized instances.
//!
//! Everything here densifies the flattened system on purpose: canonical
//! inner products of nearly equal tensors cancel catastrophically (the
//! factored norm of a difference resolves no better than the square root of
//! machine precision), so any measurement with a tight tolerance must go
//! through dense expansions. The oracle also produces residual lifts that
//! are wrong by an exactly prescribed relative amount, which turns
//! perturbation-theory statements into testable equalities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{LuSolver, SpdSolver};
use crate::operator::LowRankOperator;
use crate::tensor::{CanonicalTensor, RankOneMetric};
use crate::{Error, Result};

/// Largest flattened dimension the oracle accepts (dense matrices of this
/// size run to a few hundred megabytes).
pub const ORACLE_GUARD: usize = 6_000;

/// Flattened dense view of a system `A u = b` with solution metric `R_X`
/// and residual metric `R_Y = A R_X⁻¹ A*`.
pub struct DenseOracle {
    dims: Vec<usize>,
    a: DMatrix<f64>,
    gx: DMatrix<f64>,
    ry: DMatrix<f64>,
    a_lu: LuSolver,
    ry_chol: SpdSolver,
}

/// An inexact residual lift with the quantities its construction certifies.
#[derive(Clone, Debug)]
pub struct TruncatedLift {
    /// Lift wrong by exactly the requested relative amount in `‖·‖_Y`.
    pub y: DVector<f64>,
    /// The exact lift it perturbs.
    pub lift: DVector<f64>,
    /// `‖lift‖_Y`, which equals the true solution error `‖u − u_k‖_X`.
    pub true_err: f64,
    /// `‖y‖_Y = √(1 − δ²) · true_err`.
    pub y_norm: f64,
}

impl DenseOracle {
    pub fn new(a: &LowRankOperator, rx: &RankOneMetric) -> Result<Self> {
        let dims = a.row_dims().to_vec();
        if a.col_dims() != dims {
            return Err(Error::ShapeMismatch(
                "oracle needs a square operator".into(),
            ));
        }
        let n = a.rows_total();
        if n > ORACLE_GUARD {
            return Err(Error::GuardExceeded {
                what: "dense oracle system",
                size: n,
                guard: ORACLE_GUARD,
            });
        }
        let a_dense = a.to_dense()?;
        let mut gx = DMatrix::from_element(1, 1, 1.0);
        for (mu, &n) in dims.iter().enumerate() {
            let id = DMatrix::identity(n, n);
            gx = gx.kronecker(&rx.gram(mu).apply(&id));
        }
        let gx_chol = SpdSolver::new(&gx)?;
        let rxinv_at = gx_chol.solve_mat(&a_dense.transpose());
        let ry = &a_dense * rxinv_at;
        let ry = (&ry + ry.transpose()) * 0.5;
        let ry_chol = SpdSolver::new(&ry)?;
        let a_lu = LuSolver::new(&a_dense);
        Ok(Self {
            dims,
            a: a_dense,
            gx,
            ry,
            a_lu,
            ry_chol,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, t: &CanonicalTensor) -> Result<DVector<f64>> {
        if t.dims() != self.dims {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {:?} do not match oracle dims {:?}",
                t.dims(),
                self.dims
            )));
        }
        Ok(DVector::from_vec(t.to_dense()?))
    }

    /// `‖v‖_X` through the dense metric.
    pub fn x_norm(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.gx * v)[(0, 0)].max(0.0).sqrt()
    }

    /// `‖w‖_Y` through the dense residual metric.
    pub fn y_norm(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.ry * w)[(0, 0)].max(0.0).sqrt()
    }

    pub fn x_inner(&self, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (v.transpose() * &self.gx * w)[(0, 0)]
    }

    pub fn y_inner(&self, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (v.transpose() * &self.ry * w)[(0, 0)]
    }

    /// `‖t − v‖_X` for a canonical tensor against a dense vector.
    pub fn x_dist(&self, t: &CanonicalTensor, v: &DVector<f64>) -> Result<f64> {
        let d = self.flatten(t)? - v;
        Ok(self.x_norm(&d))
    }

    /// Direct solution `A⁻¹ b`.
    pub fn reference(&self, b: &CanonicalTensor) -> Result<DVector<f64>> {
        let b_dense = self.flatten(b)?;
        Ok(DVector::from_column_slice(
            self.a_lu
                .solve_mat(&DMatrix::from_column_slice(b_dense.len(), 1, b_dense.as_slice()))
                .as_slice(),
        ))
    }

    /// Flat residual functional `A u − b`.
    pub fn residual_functional(
        &self,
        u: &CanonicalTensor,
        b: &CanonicalTensor,
    ) -> Result<DVector<f64>> {
        Ok(&self.a * self.flatten(u)? - self.flatten(b)?)
    }

    /// Exact lift `R_Y⁻¹ g` of a flat functional.
    pub fn lift(&self, g: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(
            self.ry_chol
                .solve_mat(&DMatrix::from_column_slice(g.len(), 1, g.as_slice()))
                .as_slice(),
        )
    }

    /// Exact residual lift of the iterate `u`.
    pub fn exact_lift(&self, u: &CanonicalTensor, b: &CanonicalTensor) -> Result<DVector<f64>> {
        Ok(self.lift(&self.residual_functional(u, b)?))
    }

    /// Lift perturbed to relative `Y`-error exactly `delta`: with `q ⊥_Y r`
    /// and `‖q‖_Y = ‖r‖_Y`, the combination `(1 − δ²) r + δ√(1 − δ²) q`
    /// misses `r` by `δ‖r‖_Y` and has norm `√(1 − δ²) ‖r‖_Y`, both exactly.
    pub fn truncated_lift(
        &self,
        u: &CanonicalTensor,
        b: &CanonicalTensor,
        delta: f64,
        seed: u64,
    ) -> Result<TruncatedLift> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidConfig(format!(
                "relative truncation level must lie in [0, 1), got {delta}"
            )));
        }
        let r = self.exact_lift(u, b)?;
        let r_norm = self.y_norm(&r);
        if r_norm == 0.0 || delta == 0.0 {
            return Ok(TruncatedLift {
                y: r.clone(),
                lift: r,
                true_err: r_norm,
                y_norm: r_norm,
            });
        }
        let n = r.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = loop {
            let z = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let proj = self.y_inner(&z, &r) / (r_norm * r_norm);
            let q_raw = z - proj * &r;
            let q_norm = self.y_norm(&q_raw);
            if q_norm > 1e-8 * r_norm {
                break q_raw * (r_norm / q_norm);
            }
        };
        let y = (1.0 - delta * delta) * &r + delta * (1.0 - delta * delta).sqrt() * q;
        let y_norm = (1.0 - delta * delta).sqrt() * r_norm;
        Ok(TruncatedLift {
            y,
            lift: r,
            true_err: r_norm,
            y_norm,
        })
    }

    /// Exact canonical form of a flat order-2 vector: the reshaped matrix
    /// paired with an identity factor.
    pub fn to_canonical2d(&self, v: &DVector<f64>) -> Result<CanonicalTensor> {
        if self.dims.len() != 2 {
            return Err(Error::OrderMismatch {
                expected: 2,
                got: self.dims.len(),
            });
        }
        let (n0, n1) = (self.dims[0], self.dims[1]);
        if v.len() != n0 * n1 {
            return Err(Error::ShapeMismatch(format!(
                "vector length {} does not match {n0}×{n1}",
                v.len()
            )));
        }
        let m = DMatrix::from_fn(n0, n1, |i, j| v[i * n1 + j]);
        CanonicalTensor::from_factors(vec![m, DMatrix::identity(n1, n1)])
    }
}
