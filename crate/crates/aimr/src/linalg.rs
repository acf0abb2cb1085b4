//! Bridges between nalgebra storage and faer factorizations.
//!
//! nalgebra is the working dense type throughout the crate; faer supplies the
//! large LU / Cholesky factorizations where its blocked, multithreaded kernels
//! matter. Conversions copy the data, which is negligible next to the `O(n³)`
//! factorization they precede.

use faer::prelude::*;
use faer::Mat;
use nalgebra::DMatrix;

use crate::{Error, Result};

pub fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdSolver {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
}

impl SpdSolver {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let llt = to_faer(m)
            .llt(faer::Side::Lower)
            .map_err(|_| Error::NotSpd(format!("Cholesky failed on a {0}x{0} matrix", m.nrows())))?;
        Ok(Self { llt, dim: m.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.dim, "SPD solve: rhs has {} rows, expected {}", rhs.nrows(), self.dim);
        from_faer(self.llt.solve(&to_faer(rhs)).as_ref())
    }
}

/// LU factorization with partial pivoting, exposing transpose solves.
pub struct LuSolver {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    dim: usize,
}

impl LuSolver {
    pub fn new(m: &DMatrix<f64>) -> Self {
        Self {
            lu: to_faer(m).partial_piv_lu(),
            dim: m.nrows(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        from_faer(self.lu.solve(&to_faer(rhs)).as_ref())
    }

    /// Solves `Mᵀ x = rhs` with the factorization of `M`.
    pub fn solve_transpose_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        from_faer(self.lu.solve_transpose(&to_faer(rhs)).as_ref())
    }
}

/// Solves an SPD system, retrying once with a relative diagonal jitter of
/// `1e-12 · trace/n` when the first Cholesky attempt fails.
pub fn solve_spd_jittered(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if let Ok(chol) = SpdSolver::new(m) {
        return Ok(chol.solve_mat(rhs));
    }
    let n = m.nrows();
    let jitter = 1e-12 * m.trace() / n as f64;
    let mut jittered = m.clone();
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    match SpdSolver::new(&jittered) {
        Ok(chol) => Ok(chol.solve_mat(rhs)),
        Err(_) => Err(Error::NumericalBreakdown(format!(
            "{context}: {n}x{n} system not positive definite even after jitter {jitter:.3e}"
        ))),
    }
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let evd = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NumericalBreakdown("symmetric eigendecomposition failed".into()))?;
    let s = evd.S();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.nrows() {
        lo = lo.min(s[i]);
        hi = hi.max(s[i]);
    }
    Ok((lo, hi))
}
