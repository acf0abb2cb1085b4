//! Output files: atomic writes, float formatting, CSV tables, and the run
//! manifest that ties every artifact to its configuration.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use aimr::greedy::GreedyRow;
use aimr::solver::IterationRecord;

/// Floats print with 17 significant digits so parsing them back returns the
/// exact bit pattern.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Writes through a sibling temp file and renames, so concurrent cells never
/// expose partially written artifacts.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn save_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub const TRACE_HEADER: &[&str] = &[
    "k",
    "rank_u",
    "rank_y",
    "yk_norm",
    "eps_hat",
    "true_err",
    "tau_hat",
    "lambda_certified",
    "seconds",
];

/// Per-iteration trace; the seconds column is wall-clock and the only
/// nondeterministic field in any artifact.
pub fn write_trace_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let rows = records
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.rank_u.to_string(),
                r.rank_y.to_string(),
                fmt_f(r.yk_norm),
                fmt_f(r.eps_hat),
                fmt_opt(r.true_err),
                fmt_opt(r.tau_hat),
                r.lambda_certified.to_string(),
                format!("{:.3e}", r.seconds),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(path, TRACE_HEADER, &rows)
}

pub fn write_greedy_csv(path: &Path, rows: &[GreedyRow]) -> Result<()> {
    let mut text = String::from(GreedyRow::CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_row());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_objective_csv(path: &Path, history: &[f64]) -> Result<()> {
    let rows = history
        .iter()
        .enumerate()
        .map(|(m, &j)| vec![(m + 1).to_string(), fmt_f(j)])
        .collect::<Vec<_>>();
    write_csv(path, &["m", "objective"], &rows)
}

/// Run record written last, after every other artifact is in place.
#[derive(Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub version: u32,
    pub command: String,
    pub tool_version: &'static str,
    pub created_unix: u64,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(
        command: &str,
        config: &C,
        config_hash: &str,
        master_seed: u64,
        wall_seconds: f64,
        artifacts: Vec<String>,
    ) -> Result<Self> {
        Ok(Self {
            format: "run-manifest",
            version: 1,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds,
            config_hash: config_hash.to_string(),
            master_seed,
            config: serde_json::to_value(config)?,
            artifacts,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        save_json_atomic(&dir.join("manifest.json"), self)
    }
}
