//! Floating long-baseline array: slant-range differences against a reference buoy.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COINCIDENT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuoyArray {
    /// Reference buoy, ENU (m).
    pub reference: Vector3<f64>,
    /// Remaining buoys, ENU (m), one slant-range difference each.
    pub others: Vec<Vector3<f64>>,
}

impl BuoyArray {
    pub fn new(reference: Vector3<f64>, others: Vec<Vector3<f64>>) -> Result<Self> {
        if others.is_empty() {
            return Err(Error::InvalidInput("buoy array needs at least two buoys".into()));
        }
        let all: Vec<_> = std::iter::once(&reference).chain(others.iter()).collect();
        if all.iter().any(|b| !b.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("buoy positions must be finite".into()));
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if (*a - *b).norm() < COINCIDENT {
                    return Err(Error::InvalidInput("buoy positions must be distinct".into()));
                }
            }
        }
        Ok(Self { reference, others })
    }

    /// The four-buoy surface array of the reference simulation, Buoy1 as reference.
    pub fn table_one() -> Self {
        Self {
            reference: Vector3::new(0.0, -500.0, 0.0),
            others: vec![
                Vector3::new(-400.0, 0.0, 0.0),
                Vector3::new(-200.0, 1000.0, 0.0),
                Vector3::new(200.0, 500.0, 0.0),
            ],
        }
    }

    /// Number of slant-range differences.
    pub fn len(&self) -> usize {
        self.others.len()
    }

    pub fn is_empty(&self) -> bool {
        self.others.is_empty()
    }

    fn ranges(&self, p: &Vector3<f64>) -> Result<(f64, Vec<f64>)> {
        let r0 = (p - self.reference).norm();
        let ri: Vec<f64> = self.others.iter().map(|b| (p - b).norm()).collect();
        if r0 < COINCIDENT || ri.iter().any(|r| *r < COINCIDENT) {
            return Err(Error::DegenerateGeometry);
        }
        Ok((r0, ri))
    }
}

/// One LBL epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LblMeasurement {
    pub t: f64,
    /// Measured slant-range differences, one per non-reference buoy (m).
    pub rho: DVector<f64>,
    /// Per-range ranging error (m).
    pub sigma: f64,
}

impl LblMeasurement {
    pub fn validate(&self, buoys: &BuoyArray) -> Result<()> {
        if self.rho.len() != buoys.len() {
            return Err(Error::InvalidInput(format!(
                "LBL epoch has {} differences, array has {}",
                self.rho.len(),
                buoys.len()
            )));
        }
        if !(self.sigma > 0.0) || !self.t.is_finite() || !self.rho.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("LBL epoch must be finite with σ > 0".into()));
        }
        Ok(())
    }

    /// Covariance of the differences. Each difference shares the reference
    /// range, so independent per-range noise σ gives `σ²(I + 11ᵀ)`. `extra`
    /// adds an independent per-difference term for unmodelled systematic error.
    pub fn covariance(&self, extra: f64) -> DMatrix<f64> {
        let m = self.rho.len();
        let s2 = self.sigma * self.sigma;
        DMatrix::from_fn(m, m, |i, j| {
            let diag = if i == j { s2 + extra * extra } else { 0.0 };
            s2 + diag
        })
    }
}

/// Slant-range differences `‖p − bᵢ‖ − ‖p − b₀‖` predicted at `p`.
pub fn lbl_predicted_rho(p: &Vector3<f64>, buoys: &BuoyArray) -> Result<DVector<f64>> {
    let (r0, ri) = buoys.ranges(p)?;
    Ok(DVector::from_iterator(ri.len(), ri.into_iter().map(|r| r - r0)))
}

/// Gradient rows of [`lbl_predicted_rho`]: `(p − bᵢ)/Rᵢ − (p − b₀)/R₀`.
pub fn lbl_geometry_rows(p: &Vector3<f64>, buoys: &BuoyArray) -> Result<DMatrix<f64>> {
    let (r0, ri) = buoys.ranges(p)?;
    let u0 = (p - buoys.reference) / r0;
    let mut e = DMatrix::zeros(ri.len(), 3);
    for (i, (b, r)) in buoys.others.iter().zip(ri).enumerate() {
        let row = (p - b) / r - u0;
        e.row_mut(i).copy_from(&row.transpose());
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_one_reference_value() {
        let rho = lbl_predicted_rho(&Vector3::new(0.0, 0.0, -100.0), &BuoyArray::table_one()).unwrap();
        let expected = 170_000f64.sqrt() - 260_000f64.sqrt();
        assert_relative_eq!(rho[0], expected, epsilon = 1e-12);
        assert!((rho[0] - (-97.5914)).abs() < 1e-4);
    }

    #[test]
    fn equidistant_point_gives_zero() {
        let b = BuoyArray::new(Vector3::new(-10.0, 0.0, 0.0), vec![Vector3::new(10.0, 0.0, 0.0)]).unwrap();
        let p = Vector3::new(0.0, 7.0, -3.0);
        assert_relative_eq!(lbl_predicted_rho(&p, &b).unwrap()[0], 0.0, epsilon = 1e-12);
        let row = lbl_geometry_rows(&p, &b).unwrap();
        // row lies along the baseline, orthogonal to the bisector plane
        assert_relative_eq!(row[(0, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(row[(0, 2)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_point_is_degenerate() {
        let b = BuoyArray::table_one();
        assert!(matches!(lbl_predicted_rho(&b.reference.clone(), &b), Err(Error::DegenerateGeometry)));
        assert!(matches!(lbl_geometry_rows(&b.others[1].clone(), &b), Err(Error::DegenerateGeometry)));
    }

    #[test]
    fn rows_match_finite_difference() {
        let b = BuoyArray::table_one();
        let p = Vector3::new(50.0, 100.0, -80.0);
        let e = lbl_geometry_rows(&p, &b).unwrap();
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = 1e-5;
            let fd = (lbl_predicted_rho(&(p + d), &b).unwrap() - lbl_predicted_rho(&(p - d), &b).unwrap()) / 2e-5;
            for i in 0..3 {
                assert!((e[(i, k)] - fd[i]).abs() < 1e-6);
            }
        }
        for i in 0..3 {
            assert!(e.row(i).norm() <= 2.0);
        }
    }

    #[test]
    fn depth_gives_full_rank() {
        let e = lbl_geometry_rows(&Vector3::new(0.0, 0.0, -100.0), &BuoyArray::table_one()).unwrap();
        let sv = e.svd(false, false).singular_values;
        assert!(sv.min() > 1e-3);
    }

    #[test]
    fn one_metre_east_is_locally_linear() {
        let b = BuoyArray::table_one();
        let p = Vector3::new(20.0, -30.0, -100.0);
        let d = Vector3::new(1.0, 0.0, 0.0);
        let exact = lbl_predicted_rho(&(p + d), &b).unwrap() - lbl_predicted_rho(&p, &b).unwrap();
        let lin = lbl_geometry_rows(&p, &b).unwrap() * DVector::from_column_slice(d.as_slice());
        for i in 0..3 {
            assert!((exact[i] - lin[i]).abs() <= 0.02 * exact[i].abs().max(1e-3));
        }
    }

    #[test]
    fn difference_covariance_shares_reference() {
        let z = LblMeasurement { t: 0.0, rho: DVector::zeros(3), sigma: 0.3 };
        let c = z.covariance(0.0);
        assert_relative_eq!(c[(0, 0)], 0.18, epsilon = 1e-15);
        assert_relative_eq!(c[(0, 1)], 0.09, epsilon = 1e-15);
    }
}
