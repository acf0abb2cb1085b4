//! Orthonormal polynomial bases for uniform random variables.
//!
//! Each basis is orthonormal with respect to the probability measure of
//! `ξ ~ U(a, b)`, optionally split into pieces on a partition of `[a, b]`
//! (each piece carries its own scaled Legendre polynomials, so discontinuous
//! dependence on the sign of `ξ` stays spectrally accurate). Multiplication
//! operators, the quantities the Galerkin discretizations need, come out as
//! small dense matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::{Error, Result};

/// Off-diagonal entries of the Jacobi matrix of orthonormal Legendre
/// polynomials on `[−1, 1]` under the uniform probability measure:
/// `β_j = j / √(4j² − 1)`.
fn jacobi_beta(j: usize) -> f64 {
    let jf = j as f64;
    jf / (4.0 * jf * jf - 1.0).sqrt()
}

/// Gauss–Legendre rule with `n` points: nodes on `[−1, 1]` and probability
/// weights summing to one, via the Golub–Welsch eigendecomposition.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = jacobi_beta(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Values of the orthonormal Legendre polynomials `p_0 … p_deg` at `t`.
fn legendre_values(deg: usize, t: f64) -> DVector<f64> {
    let mut p = DVector::zeros(deg + 1);
    p[0] = 1.0;
    if deg >= 1 {
        p[1] = t / jacobi_beta(1);
    }
    for j in 1..deg {
        p[j + 1] = (t * p[j] - jacobi_beta(j) * p[j - 1]) / jacobi_beta(j + 1);
    }
    p
}

/// Orthonormal (optionally piecewise) polynomial basis of a uniform random
/// variable. The degenerate case `a = b` models a point mass and collapses
/// to the single constant function.
#[derive(Clone, Debug)]
pub struct UniformBasis {
    a: f64,
    b: f64,
    /// Piece boundaries, including both endpoints.
    breaks: Vec<f64>,
    /// Polynomial degree on every piece.
    degree: usize,
}

impl UniformBasis {
    /// Single-piece Legendre basis of the given degree on `[a, b]`.
    pub fn legendre(a: f64, b: f64, degree: usize) -> Result<Self> {
        Self::piecewise(a, b, &[], degree)
    }

    /// Piecewise basis split at the given interior points.
    pub fn piecewise(a: f64, b: f64, interior_breaks: &[f64], degree: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(Error::InvalidConfig(format!(
                "invalid uniform range [{a}, {b}]"
            )));
        }
        if a == b {
            return Ok(Self {
                a,
                b,
                breaks: vec![a, b],
                degree: 0,
            });
        }
        let mut breaks = vec![a];
        breaks.extend_from_slice(interior_breaks);
        breaks.push(b);
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(format!(
                    "piece boundaries must increase strictly inside [{a}, {b}], got {interior_breaks:?}"
                )));
            }
        }
        Ok(Self { a, b, breaks, degree })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn num_pieces(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn is_point_mass(&self) -> bool {
        self.a == self.b
    }

    /// Basis dimension: pieces × (degree + 1).
    pub fn dim(&self) -> usize {
        if self.is_point_mass() {
            1
        } else {
            self.num_pieces() * (self.degree + 1)
        }
    }

    fn piece_of(&self, xi: f64) -> usize {
        let k = self.breaks[1..self.breaks.len() - 1]
            .iter()
            .filter(|&&brk| xi >= brk)
            .count();
        k.min(self.num_pieces() - 1)
    }

    /// Normalization factor making the piece-local Legendre polynomials
    /// orthonormal under the global measure.
    fn piece_scale(&self, piece: usize) -> f64 {
        ((self.b - self.a) / (self.breaks[piece + 1] - self.breaks[piece])).sqrt()
    }

    /// Values of all basis functions at `xi`.
    pub fn eval(&self, xi: f64) -> DVector<f64> {
        if self.is_point_mass() {
            return DVector::from_element(1, 1.0);
        }
        let mut out = DVector::zeros(self.dim());
        let piece = self.piece_of(xi);
        let (lo, hi) = (self.breaks[piece], self.breaks[piece + 1]);
        let t = 2.0 * (xi - lo) / (hi - lo) - 1.0;
        let vals = legendre_values(self.degree, t) * self.piece_scale(piece);
        out.rows_mut(piece * (self.degree + 1), self.degree + 1)
            .copy_from(&vals);
        out
    }

    /// Coefficients of the constant function 1; also the vector of basis
    /// means `E[φ_j]`.
    pub fn constant_coeffs(&self) -> DVector<f64> {
        if self.is_point_mass() {
            return DVector::from_element(1, 1.0);
        }
        let mut out = DVector::zeros(self.dim());
        for piece in 0..self.num_pieces() {
            out[piece * (self.degree + 1)] = 1.0 / self.piece_scale(piece);
        }
        out
    }

    /// Galerkin matrix of multiplication by `ξ`: block diagonal with the
    /// affinely shifted Jacobi matrix of each piece.
    pub fn mult_xi(&self) -> DMatrix<f64> {
        if self.is_point_mass() {
            return DMatrix::from_element(1, 1, self.a);
        }
        let q = self.degree + 1;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for piece in 0..self.num_pieces() {
            let (lo, hi) = (self.breaks[piece], self.breaks[piece + 1]);
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let mut block = out.view_mut((piece * q, piece * q), (q, q));
            for j in 0..q {
                block[(j, j)] = mid;
                if j + 1 < q {
                    let b = half * jacobi_beta(j + 1);
                    block[(j, j + 1)] = b;
                    block[(j + 1, j)] = b;
                }
            }
        }
        out
    }

    /// Galerkin matrix of multiplication by `f(ξ)`, integrated with a
    /// per-piece Gauss rule of `quad_points` points.
    pub fn mult_fn<F>(&self, f: F, quad_points: usize) -> DMatrix<f64>
    where
        F: Fn(f64) -> f64,
    {
        if self.is_point_mass() {
            return DMatrix::from_element(1, 1, f(self.a));
        }
        let q = self.degree + 1;
        let (nodes, weights) = gauss_legendre(quad_points);
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for piece in 0..self.num_pieces() {
            let (lo, hi) = (self.breaks[piece], self.breaks[piece + 1]);
            // global measure of the piece times the piece-scale² is one
            let mut block = out.view_mut((piece * q, piece * q), (q, q));
            for (&t, &w) in nodes.iter().zip(&weights) {
                let xi = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                let vals = legendre_values(self.degree, t);
                let fw = f(xi) * w;
                for j in 0..q {
                    for k in 0..q {
                        block[(j, k)] += fw * vals[j] * vals[k];
                    }
                }
            }
        }
        0.5 * (&out + out.transpose())
    }

    /// Draws `ξ ~ U(a, b)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.is_point_mass() {
            self.a
        } else {
            self.a + (self.b - self.a) * rng.random::<f64>()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauss_legendre_moments() {
        let (nodes, weights) = gauss_legendre(5);
        let moment = |p: i32| -> f64 {
            nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * x.powi(p))
                .sum()
        };
        assert!((moment(0) - 1.0).abs() < 1e-14);
        assert!(moment(1).abs() < 1e-14);
        assert!((moment(2) - 1.0 / 3.0).abs() < 1e-14);
        assert!((moment(4) - 1.0 / 5.0).abs() < 1e-14);
        assert!((moment(8) - 1.0 / 9.0).abs() < 1e-14);
        // 5-point rule is exact through degree 9
        assert!((moment(9)).abs() < 1e-14);
    }

    #[test]
    fn degree_one_jacobi_entry() {
        let basis = UniformBasis::legendre(-1.0, 1.0, 1).unwrap();
        let h = basis.mult_xi();
        assert_eq!(h.nrows(), 2);
        assert!((h[(0, 1)] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((h[(1, 0)] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(h[(0, 0)], 0.0);
    }

    #[test]
    fn affine_range_shifts_the_jacobi_matrix() {
        let basis = UniformBasis::legendre(0.0, 4000.0, 3).unwrap();
        let h = basis.mult_xi();
        for j in 0..4 {
            assert!((h[(j, j)] - 2000.0).abs() < 1e-9);
        }
        assert!((h[(0, 1)] - 2000.0 / 3f64.sqrt()).abs() < 1e-9);
    }

    fn gram_by_quadrature(basis: &UniformBasis, pts: usize) -> DMatrix<f64> {
        let (nodes, weights) = gauss_legendre(pts);
        let dim = basis.dim();
        let (a, b) = basis.range();
        let mut g = DMatrix::zeros(dim, dim);
        for piece in 0..basis.num_pieces() {
            let (lo, hi) = (basis.breaks[piece], basis.breaks[piece + 1]);
            let mass = (hi - lo) / (b - a);
            for (&t, &w) in nodes.iter().zip(&weights) {
                let xi = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                let v = basis.eval(xi);
                g += (w * mass) * &v * v.transpose();
            }
        }
        g
    }

    #[test]
    fn piecewise_basis_is_orthonormal() {
        let basis = UniformBasis::piecewise(-350.0, 350.0, &[0.0], 5).unwrap();
        assert_eq!(basis.dim(), 12);
        let g = gram_by_quadrature(&basis, 12);
        let dev = (&g - DMatrix::identity(12, 12)).abs().max();
        assert!(dev < 1e-12, "orthonormality defect {dev}");

        let lopsided = UniformBasis::piecewise(0.0, 1.0, &[0.1, 0.7], 3).unwrap();
        let g2 = gram_by_quadrature(&lopsided, 10);
        let dev2 = (&g2 - DMatrix::identity(lopsided.dim(), lopsided.dim())).abs().max();
        assert!(dev2 < 1e-12);
    }

    #[test]
    fn constant_coefficients_reproduce_one() {
        let basis = UniformBasis::piecewise(-350.0, 350.0, &[0.0], 5).unwrap();
        let c = basis.constant_coeffs();
        let inv_sqrt2 = 0.5f64.sqrt();
        assert!((c[0] - inv_sqrt2).abs() < 1e-15);
        assert!((c[6] - inv_sqrt2).abs() < 1e-15);
        assert!((c.norm() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let xi = basis.sample(&mut rng);
            let one = basis.eval(xi).dot(&c);
            assert!((one - 1.0).abs() < 1e-12, "1 reproduced as {one} at {xi}");
        }
    }

    #[test]
    fn mult_xi_represents_the_identity_function() {
        let basis = UniformBasis::piecewise(-350.0, 350.0, &[0.0], 5).unwrap();
        let coeffs = basis.mult_xi() * basis.constant_coeffs();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xi = basis.sample(&mut rng);
            let val = basis.eval(xi).dot(&coeffs);
            assert!((val - xi).abs() < 1e-9 * 350.0, "ξ = {xi} represented as {val}");
        }
    }

    #[test]
    fn exponential_multiplication_matrix() {
        let (a, b) = ((0.1f64).ln(), (10.0f64).ln());
        let basis = UniformBasis::legendre(a, b, 5).unwrap();
        let h = basis.mult_fn(f64::exp, 2 * 5 + 8);
        assert_eq!(h.nrows(), 6);
        let sym = (&h - h.transpose()).abs().max();
        assert!(sym < 1e-13);
        // E[exp ξ] = (e^b − e^a)/(b − a)
        let c = basis.constant_coeffs();
        let mean = (h * &c).dot(&c);
        let exact = (10.0 - 0.1) / (b - a);
        assert!((mean - exact).abs() < 1e-12, "E[exp ξ] = {mean}, want {exact}");
        // positive definiteness of multiplication by a positive function
        let eig = SymmetricEigen::new(basis.mult_fn(f64::exp, 18));
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn point_mass_degenerates_cleanly() {
        let basis = UniformBasis::legendre(0.0, 0.0, 4).unwrap();
        assert_eq!(basis.dim(), 1);
        assert_eq!(basis.eval(0.0)[0], 1.0);
        assert_eq!(basis.mult_xi()[(0, 0)], 0.0);
        assert_eq!(basis.mult_fn(f64::exp, 4)[(0, 0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(basis.sample(&mut rng), 0.0);
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(UniformBasis::piecewise(0.0, 1.0, &[0.5, 0.4], 2).is_err());
        assert!(UniformBasis::piecewise(1.0, 0.0, &[], 2).is_err());
        assert!(UniformBasis::piecewise(0.0, 1.0, &[0.0], 2).is_err());
    }

    #[test]
    fn eval_handles_points_at_breaks() {
        let basis = UniformBasis::piecewise(-1.0, 1.0, &[0.0], 2).unwrap();
        // at the break, the right piece is used; at the top endpoint, the last
        let at_break = basis.eval(0.0);
        assert!(at_break.rows(0, 3).norm() == 0.0);
        assert!(at_break.rows(3, 3).norm() > 0.0);
        let at_top = basis.eval(1.0);
        assert!(at_top.rows(3, 3).norm() > 0.0);
    }
}
