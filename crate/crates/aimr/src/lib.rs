//! Low-rank tensor methods for high-dimensional linear systems `A u = b`.
//!
//! The unknown `u` lives in a tensor-product space `X = ⊗ R^{n_μ}` and is
//! represented in canonical (sum of rank-one terms) format throughout. The
//! solver never forms dense vectors of size `Π n_μ`; every operation works on
//! the low-rank factors directly.
//!
//! The central algorithm is a gradient-type minimal-residual iteration in
//! which the residual norm is measured in an operator-adapted dual metric
//! `R_Y = A R_X⁻¹ A*`. Under that metric the iteration map is perfectly
//! conditioned, and the iteration converges in one step when the residual
//! lift is computed exactly. In practice the lift is replaced by a low-rank
//! greedy approximation with a relative accuracy target `δ`, which perturbs
//! the ideal iteration in a controlled way and yields certified error
//! estimators as a by-product.
//!
//! Module map:
//! - [`tensor`]: canonical tensors, rank-one metrics on `X`, order-2 weighted
//!   SVD projection.
//! - [`operator`]: low-rank Kronecker-structured operators and the dual
//!   residual metric.
//! - [`residual`]: greedy low-rank approximation of the lifted residual
//!   (the `Λ^δ` map) with a stagnation-based stopping rule.
//! - [`solver`]: the perturbed minimal-residual gradient iteration, the
//!   classical-metric baseline, and rank projections.
//! - [`greedy`]: weak greedy rank-one outer loop with quasi-optimality
//!   diagnostics.
//! - [`problems`]: stochastic Galerkin benchmark problems (Q1 finite
//!   elements × polynomial chaos) and reference solves.
//! - [`oracle`]: dense cross-checking utilities for guard-sized instances.
//! - [`io`]: JSON serialization of tensors, operators, and metrics.

pub mod greedy;
pub mod io;
pub mod linalg;
pub mod operator;
pub mod oracle;
pub mod problems;
pub mod residual;
pub mod solver;
pub mod tensor;

pub use greedy::{weak_greedy_solve, GreedyConfig, GreedyDiagnostics, GreedySchedule};
pub use operator::{DualMetric, DualMode, Factor, LowRankOperator};
pub use residual::{lambda_delta, lambda_iterates, LambdaConfig, LambdaReport, ResidualProblem};
pub use solver::{gradient_solve, LambdaMode, SolverConfig};
pub use tensor::{CanonicalTensor, FormatSpec, ProjectorKind, RankOneMetric};

/// Errors shared by all solver modules.
///
/// The CLI maps these onto process exit codes, so variants distinguish
/// configuration mistakes, numerical failures, and guard violations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected an order-{expected} tensor, got order {got}")]
    OrderMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("{what} ({size}) exceeds the guard ({guard}); raise the guard explicitly to proceed")]
    GuardExceeded {
        what: &'static str,
        size: usize,
        guard: usize,
    },
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
