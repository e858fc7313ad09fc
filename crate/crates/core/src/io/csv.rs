//! Truth and estimate CSV files.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Trajectory;

/// One truth sample: ENU position and velocity, body-to-ENU attitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub t: f64,
    pub e: f64,
    pub n: f64,
    pub u: f64,
    pub ve: f64,
    pub vn: f64,
    pub vu: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
}

impl TruthRow {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.e, self.n, self.u)
    }

    pub fn attitude(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(Quaternion::new(self.qw, self.qx, self.qy, self.qz))
    }

    /// Samples `truth` every `1/rate` seconds.
    pub fn sample(truth: &Trajectory, rate: f64) -> Vec<TruthRow> {
        let step = (truth.rate / rate).round().max(1.0) as usize;
        truth
            .samples
            .iter()
            .step_by(step)
            .map(|s| {
                let q = s.q.quaternion();
                TruthRow {
                    t: s.t,
                    e: s.p.x,
                    n: s.p.y,
                    u: s.p.z,
                    ve: s.v.x,
                    vn: s.v.y,
                    vu: s.v.z,
                    qw: q.w,
                    qx: q.i,
                    qy: q.j,
                    qz: q.k,
                }
            })
            .collect()
    }
}

/// One estimate paired with the truth at the same time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: f64,
    pub est_e: f64,
    pub est_n: f64,
    pub est_u: f64,
    pub true_e: f64,
    pub true_n: f64,
    pub true_u: f64,
    pub err_e: f64,
    pub err_n: f64,
    pub err_u: f64,
}

impl EstimateRow {
    pub fn new(t: f64, est: Vector3<f64>, truth: Vector3<f64>) -> Self {
        let err = est - truth;
        Self {
            t,
            est_e: est.x,
            est_n: est.y,
            est_u: est.z,
            true_e: truth.x,
            true_n: truth.y,
            true_u: truth.z,
            err_e: err.x,
            err_n: err.y,
            err_u: err.z,
        }
    }

    pub fn error(&self) -> Vector3<f64> {
        Vector3::new(self.err_e, self.err_n, self.err_u)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { path: path.display().to_string(), line, msg: format!("{kind:?}") },
    }
}

pub fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    read_rows(path)
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    read_rows(path)
}
