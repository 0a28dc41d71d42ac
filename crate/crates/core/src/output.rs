//! CSV and JSON writers. Floats are written with 17 significant digits, and
//! every file gets a `<name>.meta.json` sidecar with the seed and resolved
//! config.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::MetaTrace;
use crate::error::Result;

/// `{:.16e}`: round-trips every finite `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub estimator: String,
    pub k: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub n_pairs: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub total_variance: f64,
    pub mean_grad_norm: f64,
}

pub const VARIANCE_HEADER: [&str; 10] = [
    "estimator",
    "K",
    "M",
    "alpha",
    "beta",
    "n_pairs",
    "sigma",
    "replicates",
    "total_variance",
    "mean_grad_norm",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    /// Resolved config, as spec text.
    pub config: String,
    pub version: String,
}

impl Sidecar {
    pub fn new(seed: u64, config: impl Into<String>) -> Self {
        Sidecar {
            seed,
            config: config.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn prepare(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_sidecar(path: &Path, meta: &Sidecar) -> Result<()> {
    write_json(&sidecar_path(path), meta)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_reader(File::open(sidecar_path(path))?)?)
}

/// Pretty JSON, no sidecar.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    prepare(path)?;
    let file = File::create(path)?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

pub fn write_variance_csv(path: &Path, rows: &[VarianceRow], meta: &Sidecar) -> Result<()> {
    prepare(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(VARIANCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.k.to_string(),
            r.m.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.beta),
            r.n_pairs.to_string(),
            fmt_f64(r.sigma),
            r.replicates.to_string(),
            fmt_f64(r.total_variance),
            fmt_f64(r.mean_grad_norm),
        ])?;
    }
    w.flush()?;
    write_sidecar(path, meta)
}

pub fn read_variance_csv(path: &Path) -> Result<Vec<VarianceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| crate::Error::invalid(format!("column {i}: {e}")));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| crate::Error::invalid(format!("column {i}: {e}")));
        rows.push(VarianceRow {
            estimator: rec[0].to_string(),
            k: u(1)?,
            m: u(2)?,
            alpha: f(3)?,
            beta: f(4)?,
            n_pairs: u(5)?,
            sigma: f(6)?,
            replicates: u(7)?,
            total_variance: f(8)?,
            mean_grad_norm: f(9)?,
        });
    }
    Ok(rows)
}

pub fn write_trace_csv(path: &Path, trace: &MetaTrace, meta: &Sidecar) -> Result<()> {
    prepare(path)?;
    let dim = trace.final_theta.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["outer_step".to_string(), "inner_step".to_string()];
    header.extend((0..dim).map(|i| format!("theta_{i}")));
    header.extend(["grad_norm".to_string(), "eval_loss".to_string()]);
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.outer_step.to_string(), r.inner_step.to_string()];
        row.extend(r.theta.iter().map(|&t| fmt_f64(t)));
        row.push(fmt_f64(r.grad_norm));
        row.push(fmt_f64(r.eval_loss));
        w.write_record(&row)?;
    }
    w.flush()?;
    write_sidecar(path, meta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_theta: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub best_eval_loss: f64,
    pub wall_time_secs: f64,
    pub failure: Option<String>,
}

impl From<&MetaTrace> for RunSummary {
    fn from(t: &MetaTrace) -> Self {
        RunSummary {
            final_theta: t.final_theta.clone(),
            initial_eval_loss: t.initial_eval(),
            final_eval_loss: t.final_eval(),
            best_eval_loss: t.best_eval_loss,
            wall_time_secs: t.wall_time_secs,
            failure: t.failure.clone(),
        }
    }
}

/// `trace.csv` and `summary.json` (each with a sidecar) under `dir`.
pub fn write_run(dir: &Path, trace: &MetaTrace, meta: &Sidecar) -> Result<()> {
    write_trace_csv(&dir.join("trace.csv"), trace, meta)?;
    let summary = dir.join("summary.json");
    write_json(&summary, &RunSummary::from(trace))?;
    write_sidecar(&summary, meta)
}
