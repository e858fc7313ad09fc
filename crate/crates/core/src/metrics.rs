//! Position error metrics.
//!
//! Estimates and truth share the ENU frame by construction, so no trajectory
//! alignment is applied before computing ATE.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EstimateRow, TruthRow};
use crate::sim::Trajectory;
use crate::state::NavState;

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Per-axis RMS of `est − true`: `[E, N, U]`.
pub fn rmse_enu(records: &[EstimateRow]) -> Result<[f64; 3]> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = records.len() as f64;
    let axis = |i: usize| (compensated_sum(records.iter().map(|r| r.error()[i].powi(2))) / n).sqrt();
    Ok([axis(0), axis(1), axis(2)])
}

/// RMS of the 3-D error norms.
pub fn ate(records: &[EstimateRow]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((compensated_sum(records.iter().map(|r| r.error().norm_squared())) / records.len() as f64).sqrt())
}

/// Largest horizontal error norm with `t ∈ [start, end]`.
pub fn max_drift(records: &[EstimateRow], start: f64, end: f64) -> Result<f64> {
    records
        .iter()
        .filter(|r| start <= r.t && r.t <= end)
        .map(|r| r.err_e.hypot(r.err_n))
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .ok_or(Error::EmptyInterval)
}

/// Horizontal RMS error `√(RMSE_E² + RMSE_N²)`.
pub fn horizontal_rmse(records: &[EstimateRow]) -> Result<f64> {
    let [e, n, _] = rmse_enu(records)?;
    Ok(e.hypot(n))
}

/// Pairs estimates with the truth trajectory at the same instants.
pub fn pair_with_trajectory(estimates: &[NavState], truth: &Trajectory) -> Vec<EstimateRow> {
    estimates
        .iter()
        .filter_map(|x| truth.at(x.t).map(|(p, _, _)| EstimateRow::new(x.t, x.p, p)))
        .collect()
}

/// Pairs estimates with sampled truth, interpolating positions linearly.
/// Estimates outside the truth span are dropped.
pub fn pair_with_rows(estimates: &[NavState], truth: &[TruthRow]) -> Vec<EstimateRow> {
    estimates.iter().filter_map(|x| interpolate(truth, x.t).map(|p| EstimateRow::new(x.t, x.p, p))).collect()
}

fn interpolate(rows: &[TruthRow], t: f64) -> Option<Vector3<f64>> {
    let i = rows.partition_point(|r| r.t <= t + 1e-9);
    let a = rows.get(i.checked_sub(1)?)?;
    if (t - a.t).abs() <= 1e-9 {
        return Some(a.position());
    }
    let b = rows.get(i)?;
    let w = (t - a.t) / (b.t - a.t);
    Some(a.position() * (1.0 - w) + b.position() * w)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeStats {
    pub epochs: usize,
    pub total_s: f64,
    pub mean_s: f64,
    pub max_s: f64,
}

impl SolveTimeStats {
    pub fn from_times(times: &[f64]) -> Self {
        if times.is_empty() {
            return Self::default();
        }
        let total = compensated_sum(times.iter().copied());
        Self {
            epochs: times.len(),
            total_s: total,
            mean_s: total / times.len() as f64,
            max_s: times.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_e: f64,
    pub rmse_n: f64,
    pub rmse_u: f64,
    pub rmse_horizontal: f64,
    pub ate: f64,
    /// Largest horizontal error over the whole run.
    pub max_drift: f64,
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time: Option<SolveTimeStats>,
}

impl MetricsReport {
    pub fn compute(records: &[EstimateRow], solve_times: Option<&[f64]>) -> Result<Self> {
        let [e, n, u] = rmse_enu(records)?;
        let first = records.first().map(|r| r.t).unwrap_or(0.0);
        let last = records.last().map(|r| r.t).unwrap_or(0.0);
        Ok(Self {
            rmse_e: e,
            rmse_n: n,
            rmse_u: u,
            rmse_horizontal: e.hypot(n),
            ate: ate(records)?,
            max_drift: max_drift(records, first, last)?,
            records: records.len(),
            solve_time: solve_times.map(SolveTimeStats::from_times),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "records        {}", self.records)?;
        writeln!(f, "RMSE E/N/U (m) {:.4} {:.4} {:.4}", self.rmse_e, self.rmse_n, self.rmse_u)?;
        writeln!(f, "RMSE horiz (m) {:.4}", self.rmse_horizontal)?;
        writeln!(f, "ATE (m)        {:.4}", self.ate)?;
        write!(f, "max drift (m)  {:.4}", self.max_drift)?;
        if let Some(s) = &self.solve_time {
            write!(f, "\nsolve time (s) total {:.3}, mean {:.6}, max {:.6} over {} epochs", s.total_s, s.mean_s, s.max_s, s.epochs)?;
        }
        Ok(())
    }
}
