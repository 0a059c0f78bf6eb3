//! Artifact files. Every file carries the config hash and seed.
//!
//! Layout under the output directory:
//! `report.json`, `timing.json`, `training/{lap.csv,lap.json,dataset.csv}` and
//! `runs/<variant>_seed<seed>{.csv,.json,_timing.csv,_trajectory.csv}`.
//! Everything except the timing files is reproducible bit for bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::experiment::ExperimentOutput;
use crate::files::save_dataset;
use crate::metrics::{compute_metrics, Metrics};
use crate::sim::{LapLog, LapOutcome, StepRecord};
use crate::variant::Variant;

/// JSON summary stored next to each lap CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapSummary {
    pub config_hash: String,
    pub variant: Variant,
    pub seed: u64,
    pub ts: f64,
    pub track_length: f64,
    pub outcome: LapOutcome,
    pub final_state: [f64; 6],
    pub metrics: Metrics,
}

impl LapSummary {
    pub fn of(log: &LapLog) -> Self {
        Self {
            config_hash: log.config_hash.clone(),
            variant: log.variant,
            seed: log.seed,
            ts: log.ts,
            track_length: log.track_length,
            outcome: log.outcome.clone(),
            final_state: log.final_state,
            metrics: compute_metrics(&log.records, log.track_length, log.ts),
        }
    }
}

fn stamp(log: &LapLog) -> String {
    format!("config_hash={} variant={} seed={}", log.config_hash, log.variant, log.seed)
}

fn write_csv<T: Serialize>(path: &Path, comment: &str, rows: &[T]) -> Result<(), SimError> {
    let f = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut f = BufWriter::new(f);
    writeln!(f, "# {comment}").map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| SimError::io(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| SimError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SimError> {
    let s = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| SimError::Format { path: path.into(), message: e.to_string() })
}

pub fn lap_stem(variant: Variant, seed: u64) -> String {
    format!("{variant}_seed{seed}")
}

/// Write the lap CSV, its summary and the timing and trajectory files.
/// Returns the path of the lap CSV.
pub fn write_lap(dir: &Path, stem: &str, log: &LapLog) -> Result<PathBuf, SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&csv_path, &stamp(log), &log.records)?;
    write_json(&dir.join(format!("{stem}.json")), &LapSummary::of(log))?;
    write_csv(&dir.join(format!("{stem}_timing.csv")), &stamp(log), &log.timings)?;
    write_csv(&dir.join(format!("{stem}_trajectory.csv")), &stamp(log), &log.predictions)?;
    Ok(csv_path)
}

pub fn read_records(path: &Path) -> Result<Vec<StepRecord>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| SimError::io(path, e))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| SimError::Format { path: path.into(), message: format!("row {}: {e}", i + 1) }))
        .collect()
}

pub fn write_experiment(dir: &Path, out: &ExperimentOutput) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(&dir.join("timing.json"), &out.timing)?;
    if let Some(log) = &out.training_log {
        let t = dir.join("training");
        write_lap(&t, "lap", log)?;
        if let Some(d) = &out.dataset {
            save_dataset(&t.join("dataset.csv"), d, &stamp(log))?;
        }
    }
    let runs = dir.join("runs");
    for log in &out.logs {
        write_lap(&runs, &lap_stem(log.variant, log.seed), log)?;
    }
    Ok(())
}

/// Field-by-field differences between stored and recomputed metrics.
pub fn metric_drift(stored: &Metrics, recomputed: &Metrics, tol: f64) -> Vec<String> {
    let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
    let mut out = Vec::new();
    match (stored.lap_time, recomputed.lap_time) {
        (Some(a), Some(b)) if close(a, b) => {}
        (None, None) => {}
        (a, b) => out.push(format!("lap_time: stored {a:?}, recomputed {b:?}")),
    }
    if stored.partial != recomputed.partial {
        out.push(format!("partial: stored {}, recomputed {}", stored.partial, recomputed.partial));
    }
    if stored.steps != recomputed.steps {
        out.push(format!("steps: stored {}, recomputed {}", stored.steps, recomputed.steps));
    }
    if !close(stored.mean_squared_slack, recomputed.mean_squared_slack) {
        out.push(format!("mean_squared_slack: stored {:?}, recomputed {:?}", stored.mean_squared_slack, recomputed.mean_squared_slack));
    }
    if !close(stored.mean_error_norm, recomputed.mean_error_norm) {
        out.push(format!("mean_error_norm: stored {:?}, recomputed {:?}", stored.mean_error_norm, recomputed.mean_error_norm));
    }
    out
}

/// Recompute the metrics of the lap CSV at `path` and compare them with the
/// summary stored beside it.
pub fn replay(path: &Path) -> Result<(LapSummary, Metrics, Vec<String>), SimError> {
    let csv_path = if path.extension().is_some_and(|e| e == "json") { path.with_extension("csv") } else { path.to_path_buf() };
    let summary: LapSummary = read_json(&csv_path.with_extension("json"))?;
    let records = read_records(&csv_path)?;
    let metrics = compute_metrics(&records, summary.track_length, summary.ts);
    let drift = metric_drift(&summary.metrics, &metrics, 1e-12);
    Ok((summary, metrics, drift))
}
