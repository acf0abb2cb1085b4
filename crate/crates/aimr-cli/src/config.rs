//! Experiment configuration: the JSON file format, flag overrides, grid
//! validation, and the config hash / per-cell seeds that make every output
//! row reproducible in isolation.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use aimr::problems::ProblemSpec;

/// Environment variable that anchors relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "AIMR_OUTPUT_ROOT";

/// A configuration problem reported before any computation starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Gradient iteration in the ideal metric with rank-`r` projection.
    AimrDirect,
    /// Weak greedy rank-one corrections in the ideal metric.
    AimrGreedy,
    /// Rank-`r` ALS minimization of the canonical residual norm.
    CmrDirect,
    /// Greedy rank-one minimization of the canonical residual norm.
    CmrGreedy,
    /// Gradient iteration with the exact dense residual lift (oracle-backed).
    IdealReference,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolverKind::AimrDirect => "aimr-direct",
            SolverKind::AimrGreedy => "aimr-greedy",
            SolverKind::CmrDirect => "cmr-direct",
            SolverKind::CmrGreedy => "cmr-greedy",
            SolverKind::IdealReference => "ideal-reference",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    /// Identity solution metric (plain 2-norm of coefficients).
    Canonical,
    /// Spatially weighted metric emphasizing the observation region.
    Weighted,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Canonical => "canonical",
            NormKind::Weighted => "weighted",
        })
    }
}

/// Where the benchmark instance comes from: a descriptor file written by
/// `make-problem`, or the descriptor inlined into the experiment config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Path { path: PathBuf },
    Inline { spec: ProblemSpec },
}

impl ProblemRef {
    pub fn load(&self, config_dir: &Path) -> Result<ProblemSpec, aimr::Error> {
        match self {
            ProblemRef::Inline { spec } => Ok(spec.clone()),
            ProblemRef::Path { path } => {
                let resolved = if path.is_relative() {
                    config_dir.join(path)
                } else {
                    path.clone()
                };
                aimr::io::read_problem(&resolved)
            }
        }
    }
}

/// One experiment: a problem, a solver grid, and reproducibility anchors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemRef,
    pub solvers: Vec<SolverKind>,
    /// Residual lift accuracies δ; a singleton for plain solves.
    pub deltas: Vec<f64>,
    /// Target ranks (projection rank or greedy correction count).
    pub ranks: Vec<usize>,
    #[serde(default = "default_norms")]
    pub norms: Vec<NormKind>,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Iteration budget of the gradient solvers.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Step size of the ideal-reference iteration; the perturbed solvers
    /// always use unit steps.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Compute exact errors against a reference solve when within guards.
    #[serde(default = "default_true")]
    pub exact_errors: bool,
    /// Swap the problem for its full-scale variant (finer mesh).
    #[serde(default)]
    pub paper_scale: bool,
}

fn default_norms() -> Vec<NormKind> {
    vec![NormKind::Canonical]
}

fn default_max_iters() -> usize {
    30
}

fn default_step() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.solvers.is_empty() {
            return Err(ConfigError("solver grid is empty".into()));
        }
        if self.deltas.is_empty() || self.ranks.is_empty() || self.norms.is_empty() {
            return Err(ConfigError("delta, rank, and norm grids must be nonempty".into()));
        }
        for &d in &self.deltas {
            if !(d > 0.0 && d < 1.0) {
                return Err(ConfigError(format!("delta {d} outside (0, 1)")));
            }
        }
        for &r in &self.ranks {
            if r == 0 {
                return Err(ConfigError("ranks must be at least 1".into()));
            }
        }
        if self.max_iters == 0 {
            return Err(ConfigError("max_iters must be at least 1".into()));
        }
        if !(self.step > 0.0) {
            return Err(ConfigError(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Output directory after applying the `AIMR_OUTPUT_ROOT` anchor.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }

    /// Hash of the effective configuration; every output row carries the
    /// short form so artifacts can be traced back to their exact settings.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        hex(&digest)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

/// One point of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub solver: SolverKind,
    pub delta: f64,
    pub rank: usize,
    pub norm: NormKind,
}

impl Cell {
    /// Deterministic per-cell seed split off the master seed, so any cell
    /// can be rerun alone and reproduce its grid result bit for bit.
    pub fn seed(&self, master_seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(master_seed.to_le_bytes());
        h.update(self.solver.to_string().as_bytes());
        h.update(self.delta.to_bits().to_le_bytes());
        h.update(self.rank.to_le_bytes());
        h.update(self.norm.to_string().as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
    }

    pub fn id(&self) -> String {
        format!("{}-d{}-r{}-{}", self.solver, self.delta, self.rank, self.norm).replace('.', "p")
    }
}

/// The full grid in deterministic row order.
pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &solver in &cfg.solvers {
        for &delta in &cfg.deltas {
            for &rank in &cfg.ranks {
                for &norm in &cfg.norms {
                    cells.push(Cell {
                        solver,
                        delta,
                        rank,
                        norm,
                    });
                }
            }
        }
    }
    cells
}
