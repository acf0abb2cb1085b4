//! Stochastic Galerkin benchmark problems.
//!
//! A [`ProblemSpec`] describes a parametric PDE discretization declaratively;
//! [`ProblemSpec::build`] turns it into a [`LinearProblem`] holding the
//! low-rank operator, the solution-space metric, the right-hand side, and a
//! local-mean quantity of interest. The [`reference`] module provides flat
//! sparse direct solves and Monte Carlo validation against per-sample
//! deterministic solutions.

pub mod basis;
pub mod build;
pub mod fem;
pub mod reference;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::operator::{DualMetric, DualMode, LowRankOperator};
use crate::tensor::{CanonicalTensor, RankOneMetric};
use crate::{Error, Result};

pub use build::{ProblemSpec, WeightSpec, OMEGA_MINUS, OMEGA_PLUS, QOI_RECT};
pub use fem::Rect;

/// Linear functional `u ↦ (1/|D|) ∫_D E[u]` together with the data needed
/// for second moments: with orthonormal stochastic bases the coefficient
/// tensor of the observed random variable gives mean and variance directly.
#[derive(Clone, Debug)]
pub struct QoiFunctional {
    /// Spatial functional applied to dimension 0.
    pub spatial: DVector<f64>,
    /// Mean vector `E[φ_j]` of each stochastic tensor dimension.
    pub stochastic_means: Vec<DVector<f64>>,
}

impl QoiFunctional {
    /// Mean and variance of the observed quantity under the joint parameter
    /// distribution.
    pub fn stats(&self, u: &CanonicalTensor) -> Result<(f64, f64)> {
        let d = u.order();
        if self.stochastic_means.len() != d - 1 {
            return Err(Error::ShapeMismatch(format!(
                "functional covers {} stochastic dimensions, solution has {}",
                self.stochastic_means.len(),
                d - 1
            )));
        }
        if u.factor(0).nrows() != self.spatial.len() {
            return Err(Error::ShapeMismatch(format!(
                "spatial functional length {} does not match dimension {}",
                self.spatial.len(),
                u.factor(0).nrows()
            )));
        }
        let r = u.rank();
        let alpha = self.spatial.transpose() * u.factor(0); // 1 × r

        let mut mean = 0.0;
        for t in 0..r {
            let mut term = alpha[(0, t)];
            for (mu, mv) in self.stochastic_means.iter().enumerate() {
                term *= mv.dot(&u.factor(mu + 1).column(t).clone_owned());
            }
            mean += term;
        }

        // coefficient tensor of the QoI random variable; its Euclidean norm
        // is the second moment because the bases are orthonormal
        let mut factors = vec![DMatrix::from_fn(1, r, |_, j| alpha[(0, j)])];
        for mu in 1..d {
            factors.push(u.factor(mu).clone());
        }
        let coeff = CanonicalTensor::from_factors(factors)?;
        let second_moment = coeff.inner(&coeff, &RankOneMetric::identity(&coeff.dims()))?;
        Ok((mean, (second_moment - mean * mean).max(0.0)))
    }
}

/// A fully assembled benchmark instance `A u = b` with its solution metric.
#[derive(Clone)]
pub struct LinearProblem {
    pub a: Arc<LowRankOperator>,
    pub rx: Arc<RankOneMetric>,
    pub b: CanonicalTensor,
    pub qoi: QoiFunctional,
    pub spec: ProblemSpec,
}

impl LinearProblem {
    pub fn dims(&self) -> Vec<usize> {
        self.a.col_dims().to_vec()
    }

    /// The residual metric `R_Y = A R_X⁻¹ A*`, materialized when the
    /// solution metric allows it.
    pub fn dual(&self) -> Result<DualMetric> {
        DualMetric::auto(self.a.clone(), self.rx.clone())
    }

    pub fn dual_with(&self, mode: DualMode) -> Result<DualMetric> {
        DualMetric::new(self.a.clone(), self.rx.clone(), mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use basis::UniformBasis;

    /// Observable `α · ξ` with `ξ ~ U(2, 6)`: mean `4α`, variance `16α²/12`.
    #[test]
    fn qoi_stats_match_closed_form() {
        let basis = UniformBasis::legendre(2.0, 6.0, 3).unwrap();
        let spatial_dim = 5;
        let q = DVector::from_fn(spatial_dim, |i, _| 0.1 * (i as f64 + 1.0));
        let u_x = DVector::from_fn(spatial_dim, |i, _| 1.0 / (i as f64 + 2.0));
        let alpha = q.dot(&u_x);

        let xi_coeffs = basis.mult_xi() * basis.constant_coeffs();
        let u = CanonicalTensor::rank_one(&[u_x, xi_coeffs]).unwrap();
        let functional = QoiFunctional {
            spatial: q,
            stochastic_means: vec![basis.constant_coeffs()],
        };
        let (mean, var) = functional.stats(&u).unwrap();
        assert!((mean - 4.0 * alpha).abs() < 1e-12, "mean {mean}");
        let want_var = alpha * alpha * 16.0 / 12.0;
        assert!((var - want_var).abs() < 1e-12, "var {var} want {want_var}");
    }

    #[test]
    fn qoi_stats_zero_rank() {
        let functional = QoiFunctional {
            spatial: DVector::from_element(4, 1.0),
            stochastic_means: vec![DVector::from_element(3, 0.5)],
        };
        let u = CanonicalTensor::zeros(&[4, 3]);
        let (mean, var) = functional.stats(&u).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn qoi_stats_shape_errors() {
        let functional = QoiFunctional {
            spatial: DVector::from_element(4, 1.0),
            stochastic_means: vec![DVector::from_element(3, 0.5)],
        };
        let wrong_order = CanonicalTensor::zeros(&[4, 3, 2]);
        assert!(functional.stats(&wrong_order).is_err());
        let wrong_spatial = CanonicalTensor::zeros(&[5, 3]);
        assert!(functional.stats(&wrong_spatial).is_err());
    }
}
