//! Builders for the stochastic Galerkin benchmark problems.
//!
//! Both families discretize a parametric PDE on the unit square with Q1
//! finite elements in space and orthonormal polynomial chaos in the random
//! variables, producing a low-rank Kronecker operator, a rank-one right-hand
//! side, and a local-mean quantity of interest.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::operator::{Factor, LowRankOperator};
use crate::problems::basis::UniformBasis;
use crate::problems::fem::{self, Rect, UnitSquareMesh};
use crate::problems::{LinearProblem, QoiFunctional};
use crate::tensor::{CanonicalTensor, Gram, RankOneMetric};
use crate::{Error, Result};

/// Observation window shared by the weighted metric and the quantity of
/// interest: the local mean over `[0.15, 0.25] × [0.45, 0.55]`.
pub const QOI_RECT: Rect = Rect {
    x0: 0.15,
    x1: 0.25,
    y0: 0.45,
    y1: 0.55,
};

/// Source geometry: `f = 1` on `OMEGA_PLUS`, `−1` on `OMEGA_MINUS`.
pub const OMEGA_PLUS: Rect = Rect {
    x0: 0.45,
    x1: 0.55,
    y0: 0.15,
    y1: 0.25,
};
pub const OMEGA_MINUS: Rect = Rect {
    x0: 0.45,
    x1: 0.55,
    y0: 0.75,
    y1: 0.85,
};

/// Spatially weighted solution metric `diag(w²) ⊗ I` with `w = w0` on the
/// rectangle and 1 elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub w0: f64,
    pub rect: Rect,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            w0: 1000.0,
            rect: QOI_RECT,
        }
    }
}

/// Declarative description of a benchmark instance; building is
/// deterministic, so the spec doubles as the problem's serialized identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemSpec {
    /// Reaction-advection-diffusion with uncertain rotation strength
    /// `ξ₁ ~ U(−advection_max, advection_max)` (piecewise basis split at 0)
    /// and log-uniform reaction coefficient `exp(ξ₂)`, `ξ₂ ~ U(ln 0.1, ln 10)`.
    /// Both variables share one flattened tensor dimension.
    #[serde(rename_all = "kebab-case")]
    Rad2d {
        mesh_n: usize,
        degree_advection: usize,
        degree_reaction: usize,
        advection_max: f64,
        weight: Option<WeightSpec>,
    },
    /// Diffusion coefficient `10 + Σ ξ_i κ_i` with trigonometric modes
    /// `κ_i` and `ξ_i ~ U(−1, 1)`, plus rotation advection scaled by
    /// `ξ₀ ~ U(0, advection_max)`. One tensor dimension per variable,
    /// `ξ₀` first.
    #[serde(rename_all = "kebab-case")]
    HighDim {
        mesh_n: usize,
        modes: usize,
        degree: usize,
        advection_max: f64,
        weight: Option<WeightSpec>,
    },
}

/// Trigonometric coefficient modes of the high-dimensional family.
fn trig_mode(i: usize, x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    let (px, py) = (PI * x, PI * y);
    match i {
        0 => px.cos(),
        1 => py.cos(),
        2 => px.sin(),
        3 => py.sin(),
        4 => px.cos() * py.cos(),
        5 => px.sin() * py.sin(),
        6 => px.cos() * py.sin(),
        7 => px.sin() * py.cos(),
        _ => unreachable!("mode index out of range"),
    }
}

const MAX_MODES: usize = 8;
const REACTION_RANGE: (f64, f64) = (-std::f64::consts::LN_10, std::f64::consts::LN_10); // ln 0.1, ln 10

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

impl ProblemSpec {
    /// Benchmark defaults for the two-dimensional family.
    pub fn rad2d(mesh_n: usize) -> Self {
        ProblemSpec::Rad2d {
            mesh_n,
            degree_advection: 5,
            degree_reaction: 5,
            advection_max: 350.0,
            weight: None,
        }
    }

    /// Benchmark defaults for the high-dimensional family.
    pub fn high_dim(mesh_n: usize, modes: usize, degree: usize) -> Self {
        ProblemSpec::HighDim {
            mesh_n,
            modes,
            degree,
            advection_max: 4000.0,
            weight: None,
        }
    }

    pub fn with_weight(mut self, w: WeightSpec) -> Self {
        match &mut self {
            ProblemSpec::Rad2d { weight, .. } | ProblemSpec::HighDim { weight, .. } => {
                *weight = Some(w)
            }
        }
        self
    }

    pub fn mesh(&self) -> Result<UnitSquareMesh> {
        let n = match self {
            ProblemSpec::Rad2d { mesh_n, .. } | ProblemSpec::HighDim { mesh_n, .. } => *mesh_n,
        };
        UnitSquareMesh::new(n)
    }

    pub fn weight(&self) -> Option<WeightSpec> {
        match self {
            ProblemSpec::Rad2d { weight, .. } | ProblemSpec::HighDim { weight, .. } => *weight,
        }
    }

    /// Number of scalar random variables (not tensor dimensions).
    pub fn num_variables(&self) -> usize {
        match self {
            ProblemSpec::Rad2d { .. } => 2,
            ProblemSpec::HighDim { modes, .. } => 1 + modes,
        }
    }

    /// One basis per random variable, in sampling order.
    fn bases(&self) -> Result<Vec<UniformBasis>> {
        match self {
            ProblemSpec::Rad2d {
                degree_advection,
                degree_reaction,
                advection_max,
                ..
            } => {
                let adv = if *advection_max == 0.0 {
                    UniformBasis::legendre(0.0, 0.0, 0)?
                } else {
                    UniformBasis::piecewise(-advection_max, *advection_max, &[0.0], *degree_advection)?
                };
                let react = UniformBasis::legendre(REACTION_RANGE.0, REACTION_RANGE.1, *degree_reaction)?;
                Ok(vec![adv, react])
            }
            ProblemSpec::HighDim {
                modes,
                degree,
                advection_max,
                ..
            } => {
                if *modes > MAX_MODES {
                    return Err(Error::InvalidConfig(format!(
                        "at most {MAX_MODES} coefficient modes are defined, got {modes}"
                    )));
                }
                let mut out = vec![UniformBasis::legendre(0.0, *advection_max, *degree)?];
                for _ in 0..*modes {
                    out.push(UniformBasis::legendre(-1.0, 1.0, *degree)?);
                }
                Ok(out)
            }
        }
    }

    /// Draws one realization of all random variables.
    pub fn sample_xi<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.bases()?.iter().map(|b| b.sample(rng)).collect())
    }

    /// Evaluated basis vectors per tensor dimension (the spatial dimension
    /// excluded). The two-dimensional family flattens both variables into
    /// one Kronecker block, advection-major.
    pub fn eval_stochastic(&self, xi: &[f64]) -> Result<Vec<DVector<f64>>> {
        let bases = self.bases()?;
        if xi.len() != bases.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} variables, got {}",
                bases.len(),
                xi.len()
            )));
        }
        match self {
            ProblemSpec::Rad2d { .. } => {
                Ok(vec![bases[0].eval(xi[0]).kronecker(&bases[1].eval(xi[1]))])
            }
            ProblemSpec::HighDim { .. } => Ok(bases
                .iter()
                .zip(xi)
                .map(|(b, &x)| b.eval(x))
                .collect()),
        }
    }

    /// Assembles the deterministic sparse system at one parameter value.
    pub fn assemble_at(&self, xi: &[f64]) -> Result<(CsMat<f64>, DVector<f64>)> {
        let mesh = self.mesh()?;
        if xi.len() != self.num_variables() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} variables, got {}",
                self.num_variables(),
                xi.len()
            )));
        }
        let load = fem::box_load(&mesh, &[(OMEGA_PLUS, 1.0), (OMEGA_MINUS, -1.0)]);
        let mat = match self {
            ProblemSpec::Rad2d { .. } => {
                let d = fem::stiffness(&mesh);
                let c = fem::advection(&mesh, fem::rotation_field);
                let r = fem::mass(&mesh);
                let sum = &d + &c.map(|&v| v * xi[0]);
                &sum + &r.map(|&v| v * xi[1].exp())
            }
            ProblemSpec::HighDim { modes, .. } => {
                let mut sum = fem::stiffness(&mesh).map(|&v| v * 10.0);
                for i in 0..*modes {
                    let ki = fem::diffusion(&mesh, |x, y| trig_mode(i, x, y));
                    sum = &sum + &ki.map(|&v| v * xi[1 + i]);
                }
                let c = fem::advection(&mesh, fem::rotation_field);
                &sum + &c.map(|&v| v * xi[0])
            }
        };
        Ok((mat, load))
    }

    /// Builds the Galerkin operator, right-hand side, metric, and quantity
    /// of interest.
    pub fn build(&self) -> Result<LinearProblem> {
        let mesh = self.mesh()?;
        let n = mesh.num_interior();
        let bases = self.bases()?;
        let load = fem::box_load(&mesh, &[(OMEGA_PLUS, 1.0), (OMEGA_MINUS, -1.0)]);
        let qoi_spatial = fem::box_mean(&mesh, QOI_RECT)?;

        let (terms, stoch_dims, b_stoch, means) = match self {
            ProblemSpec::Rad2d { degree_reaction, .. } => {
                let d = fem::stiffness(&mesh);
                let c = fem::advection(&mesh, fem::rotation_field);
                let r = fem::mass(&mesh);
                let (p1, p2) = (bases[0].dim(), bases[1].dim());
                let p = p1 * p2;
                let h1 = bases[0].mult_xi().kronecker(&DMatrix::identity(p2, p2));
                let h2 = DMatrix::identity(p1, p1)
                    .kronecker(&bases[1].mult_fn(f64::exp, 2 * degree_reaction + 8));
                let mut terms = vec![vec![Factor::sparse(d), Factor::identity(p)]];
                if !is_zero(&h1) {
                    terms.push(vec![Factor::sparse(c), Factor::Dense(h1)]);
                }
                terms.push(vec![Factor::sparse(r), Factor::Dense(h2)]);
                let bc = bases[0].constant_coeffs().kronecker(&bases[1].constant_coeffs());
                (terms, vec![p], vec![bc.clone()], vec![bc])
            }
            ProblemSpec::HighDim { modes, .. } => {
                let stoch_dims: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
                let identities =
                    |term: &mut Vec<Factor>| term.extend(stoch_dims.iter().map(|&p| Factor::identity(p)));

                let mut mean_term = vec![Factor::sparse(fem::stiffness(&mesh).map(|&v| v * 10.0))];
                identities(&mut mean_term);
                let mut terms = vec![mean_term];

                for i in 0..*modes {
                    let ki = fem::diffusion(&mesh, |x, y| trig_mode(i, x, y));
                    let mut term = vec![Factor::sparse(ki)];
                    identities(&mut term);
                    term[2 + i] = Factor::Dense(bases[1 + i].mult_xi());
                    terms.push(term);
                }

                let h0 = bases[0].mult_xi();
                if !is_zero(&h0) {
                    let mut term = vec![Factor::sparse(fem::advection(&mesh, fem::rotation_field))];
                    identities(&mut term);
                    term[1] = Factor::Dense(h0);
                    terms.push(term);
                }

                let b_stoch: Vec<DVector<f64>> =
                    bases.iter().map(|b| b.constant_coeffs()).collect();
                let means = b_stoch.clone();
                (terms, stoch_dims, b_stoch, means)
            }
        };

        let a = Arc::new(LowRankOperator::new(terms)?);
        let mut b_factors = vec![DMatrix::from_column_slice(n, 1, load.as_slice())];
        for v in &b_stoch {
            b_factors.push(DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        }
        let b = CanonicalTensor::from_factors(b_factors)?;

        let grams: Vec<Gram> = match self.weight() {
            Some(w) => {
                let mut g = vec![Gram::Diagonal(fem::nodal_weights_sq(&mesh, w.rect, w.w0))];
                g.extend(stoch_dims.iter().map(|&p| Gram::Identity(p)));
                g
            }
            None => {
                let mut g = vec![Gram::Identity(n)];
                g.extend(stoch_dims.iter().map(|&p| Gram::Identity(p)));
                g
            }
        };
        let rx = Arc::new(RankOneMetric::new(grams)?);

        Ok(LinearProblem {
            a,
            rx,
            b,
            qoi: QoiFunctional {
                spatial: qoi_spatial,
                stochastic_means: means,
            },
            spec: self.clone(),
        })
    }
}
