//! Lap metrics.

use serde::{Deserialize, Serialize};

use crate::sim::{StepRecord, StepTiming};

/// Deterministic lap metrics (reproducible bit for bit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Interpolated at the crossing of the track length; `None` if the lap
    /// was not completed.
    pub lap_time: Option<f64>,
    pub partial: bool,
    pub steps: usize,
    pub mean_squared_slack: f64,
    pub mean_error_norm: f64,
}

/// Wall-clock statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingMetrics {
    pub mean_solve_s: f64,
    pub p999_solve_s: f64,
    pub mean_refresh_s: f64,
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Nearest-rank percentile (`p` in percent).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    // the small offset keeps exact ranks such as 99.9% of 1000 from rounding up
    let rank = (p * v.len() as f64 / 100.0 - 1e-9).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn compute_metrics(records: &[StepRecord], track_length: f64, ts: f64) -> Metrics {
    let mut lap_time = None;
    for r in records {
        if r.next_progress >= track_length {
            let frac = if r.next_progress > r.progress { (track_length - r.progress) / (r.next_progress - r.progress) } else { 1.0 };
            lap_time = Some((r.k as f64 + frac.clamp(0.0, 1.0)) * ts);
            break;
        }
    }
    Metrics {
        lap_time,
        partial: lap_time.is_none(),
        steps: records.len(),
        mean_squared_slack: mean(records.iter().map(|r| r.slack * r.slack)),
        mean_error_norm: mean(records.iter().map(|r| r.error_norm)),
    }
}

pub fn compute_timing(timings: &[StepTiming]) -> TimingMetrics {
    let solve: Vec<f64> = timings.iter().map(|t| t.solve_s).collect();
    TimingMetrics {
        mean_solve_s: mean(solve.iter().copied()),
        p999_solve_s: percentile(&solve, 99.9),
        mean_refresh_s: mean(timings.iter().map(|t| t.refresh_s)),
    }
}
