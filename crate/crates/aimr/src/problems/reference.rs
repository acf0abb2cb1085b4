//! Reference solutions and Monte Carlo validation.
//!
//! Order-2 problems flatten to one sparse system and admit a direct solve;
//! higher orders are validated statistically by comparing the low-rank
//! solution against per-sample deterministic finite element solves.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::linalg::to_faer;
use crate::operator::{Factor, LowRankOperator};
use crate::problems::{LinearProblem, ProblemSpec};
use crate::tensor::CanonicalTensor;
use crate::{Error, Result};

/// Largest flattened system the direct reference solve accepts.
pub const FLAT_GUARD: usize = 200_000;

/// Direct solution of the flattened system with its achieved residual.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub u: DVector<f64>,
    pub relative_residual: f64,
}

fn factor_nnz(f: &Factor) -> Vec<(usize, usize, f64)> {
    match f {
        Factor::Sparse(m) => m
            .outer_iterator()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter().map(move |(c, &v)| (r, c, v)).collect::<Vec<_>>()
            })
            .filter(|&(_, _, v)| v != 0.0)
            .collect(),
        Factor::Dense(m) => {
            let mut out = Vec::new();
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if m[(r, c)] != 0.0 {
                        out.push((r, c, m[(r, c)]));
                    }
                }
            }
            out
        }
    }
}

/// Kronecker-expands an order-2 operator into flat triplets (duplicates are
/// summed by the sparse constructor downstream).
pub fn flatten_triplets(a: &LowRankOperator) -> Result<Vec<(usize, usize, f64)>> {
    if a.order() != 2 {
        return Err(Error::InvalidConfig(format!(
            "direct reference solves support two tensor dimensions, got {}",
            a.order()
        )));
    }
    let rows = a.rows_total();
    if rows > FLAT_GUARD {
        return Err(Error::GuardExceeded {
            what: "flattened reference system",
            size: rows,
            guard: FLAT_GUARD,
        });
    }
    let n1 = a.row_dims()[1];
    let m1 = a.col_dims()[1];
    let mut trips = Vec::new();
    for t in 0..a.num_terms() {
        let f0 = factor_nnz(a.factor(t, 0));
        let f1 = factor_nnz(a.factor(t, 1));
        trips.reserve(f0.len() * f1.len());
        for &(r0, c0, v0) in &f0 {
            for &(r1, c1, v1) in &f1 {
                trips.push((r0 * n1 + r1, c0 * m1 + c1, v0 * v1));
            }
        }
    }
    Ok(trips)
}

/// Sparse LU solve of `mat · x = rhs`.
pub(crate) fn sparse_solve(mat: &CsMat<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = mat.rows();
    let trips: Vec<Triplet<usize, usize, f64>> = mat
        .outer_iterator()
        .enumerate()
        .flat_map(|(r, row)| {
            row.iter()
                .map(move |(c, &v)| Triplet::new(r, c, v))
                .collect::<Vec<_>>()
        })
        .collect();
    solve_from_triplets(n, &trips, rhs)
}

fn solve_from_triplets(
    n: usize,
    trips: &[Triplet<usize, usize, f64>],
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sp = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, trips)
        .map_err(|e| Error::NumericalBreakdown(format!("sparse assembly failed: {e:?}")))?;
    let lu = sp
        .sp_lu()
        .map_err(|e| Error::NumericalBreakdown(format!("sparse LU failed: {e:?}")))?;
    let sol = lu.solve(&to_faer(&DMatrix::from_column_slice(n, 1, rhs.as_slice())));
    Ok(DVector::from_fn(n, |i, _| sol[(i, 0)]))
}

/// Solves the flattened order-2 system directly and reports the achieved
/// relative residual.
pub fn reference_solve(problem: &LinearProblem) -> Result<ReferenceSolution> {
    let trips = flatten_triplets(&problem.a)?;
    let n = problem.a.rows_total();
    let faer_trips: Vec<Triplet<usize, usize, f64>> = trips
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let b = DVector::from_vec(problem.b.to_dense()?);
    let u = solve_from_triplets(n, &faer_trips, &b)?;

    let mut au = DVector::zeros(n);
    for &(r, c, v) in &trips {
        au[r] += v * u[c];
    }
    let b_norm = b.norm();
    let relative_residual = if b_norm == 0.0 {
        (&au - &b).norm()
    } else {
        (&au - &b).norm() / b_norm
    };
    Ok(ReferenceSolution {
        u,
        relative_residual,
    })
}

/// Evaluates a canonical solution at one parameter point: contracts every
/// stochastic dimension with its evaluated basis vector, leaving the spatial
/// coefficient vector.
pub fn evaluate_solution(
    u: &CanonicalTensor,
    stochastic_evals: &[DVector<f64>],
) -> Result<DVector<f64>> {
    if stochastic_evals.len() != u.order() - 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} stochastic evaluation vectors, got {}",
            u.order() - 1,
            stochastic_evals.len()
        )));
    }
    let n = u.factor(0).nrows();
    let mut out = DVector::zeros(n);
    for t in 0..u.rank() {
        let mut coeff = 1.0;
        for (mu, e) in stochastic_evals.iter().enumerate() {
            coeff *= e.dot(&u.factor(mu + 1).column(t).clone_owned());
        }
        out.axpy(coeff, &u.factor(0).column(t).clone_owned(), 1.0);
    }
    Ok(out)
}

/// Monte Carlo comparison of a low-rank solution against per-sample
/// deterministic solves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McErrorReport {
    pub samples: usize,
    pub mean_rel_l2: f64,
    pub max_rel_l2: f64,
    pub seed: u64,
}

/// Samples the parameters, solves each deterministic system directly, and
/// reports relative spatial `ℓ²` errors of the evaluated low-rank solution.
pub fn monte_carlo_error(
    spec: &ProblemSpec,
    u: &CanonicalTensor,
    samples: usize,
    seed: u64,
) -> Result<McErrorReport> {
    if samples == 0 {
        return Err(Error::InvalidConfig("Monte Carlo needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for _ in 0..samples {
        let xi = spec.sample_xi(&mut rng)?;
        let (a_xi, load) = spec.assemble_at(&xi)?;
        let u_det = sparse_solve(&a_xi, &load)?;
        let u_eval = evaluate_solution(u, &spec.eval_stochastic(&xi)?)?;
        let denom = u_det.norm();
        let rel = if denom == 0.0 {
            (&u_eval - &u_det).norm()
        } else {
            (&u_eval - &u_det).norm() / denom
        };
        sum += rel;
        max = max.max(rel);
    }
    Ok(McErrorReport {
        samples,
        mean_rel_l2: sum / samples as f64,
        max_rel_l2: max,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn desk_spec() -> ProblemSpec {
        ProblemSpec::Rad2d {
            mesh_n: 6,
            degree_advection: 2,
            degree_reaction: 2,
            advection_max: 350.0,
            weight: None,
        }
    }

    #[test]
    fn flatten_matches_dense_expansion() {
        let spec = ProblemSpec::Rad2d {
            mesh_n: 4,
            degree_advection: 1,
            degree_reaction: 1,
            advection_max: 350.0,
            weight: None,
        };
        let problem = spec.build().unwrap();
        let trips = flatten_triplets(&problem.a).unwrap();
        let n = problem.a.rows_total();
        let mut flat = DMatrix::zeros(n, n);
        for (r, c, v) in trips {
            flat[(r, c)] += v;
        }
        let dense = problem.a.to_dense().unwrap();
        assert!((&flat - &dense).abs().max() < 1e-12);
    }

    #[test]
    fn reference_solve_is_accurate() {
        let problem = desk_spec().build().unwrap();
        let sol = reference_solve(&problem).unwrap();
        assert_eq!(sol.u.len(), 25 * 18);
        assert!(
            sol.relative_residual < 1e-10,
            "relative residual {}",
            sol.relative_residual
        );
    }

    #[test]
    fn oversized_flat_system_hits_the_guard() {
        let problem = ProblemSpec::rad2d(60).build().unwrap();
        match flatten_triplets(&problem.a) {
            Err(Error::GuardExceeded { size, guard, .. }) => {
                assert_eq!(size, 59 * 59 * 72);
                assert_eq!(guard, FLAT_GUARD);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn higher_order_flatten_is_rejected() {
        let problem = ProblemSpec::high_dim(6, 2, 1).build().unwrap();
        assert!(matches!(
            flatten_triplets(&problem.a),
            Err(Error::InvalidConfig(_))
        ));
    }

    /// A parameter-independent instance: the Galerkin solution is exact in
    /// the stochastic direction, so Monte Carlo errors reduce to solver
    /// round-off.
    #[test]
    fn monte_carlo_detects_the_deterministic_limit() {
        let spec = ProblemSpec::HighDim {
            mesh_n: 6,
            modes: 0,
            degree: 2,
            advection_max: 0.0,
            weight: None,
        };
        let problem = spec.build().unwrap();
        let sol = reference_solve(&problem).unwrap();
        assert!(sol.relative_residual < 1e-12);
        let n = problem.a.row_dims()[0];
        let u = CanonicalTensor::from_factors(vec![
            DMatrix::from_column_slice(n, 1, sol.u.as_slice()),
            DMatrix::from_element(1, 1, 1.0),
        ])
        .unwrap();
        let mc = monte_carlo_error(&spec, &u, 3, 42).unwrap();
        assert!(mc.max_rel_l2 < 1e-10, "max relative error {}", mc.max_rel_l2);
    }

    #[test]
    fn evaluation_contracts_stochastic_dimensions() {
        let u = CanonicalTensor::from_factors(vec![
            DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let e = DVector::from_vec(vec![2.0, 3.0, 4.0]);
        let v = evaluate_solution(&u, &[e]).unwrap();
        // term 1 picks 2.0 on the first spatial slot, term 2 picks 3.0 on the second
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!((v[1] - 3.0).abs() < 1e-15);
        assert!(evaluate_solution(&u, &[]).is_err());
    }
}
