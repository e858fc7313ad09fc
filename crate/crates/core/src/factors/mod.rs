//! Residual blocks of the fusion problem.
//!
//! A [`FactorRecord`] connects one or two keyframe states (any number for the
//! marginal prior) and evaluates a residual with Jacobians on each state's
//! 15-dim tangent. Whitening by the measurement covariance happens here, so
//! the optimizer only ever sees unit-covariance blocks.

mod aux;
mod inertial;
mod lbl;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geo::{quat_log, right_jacobian_inv};
use crate::imu::{Bias, ImuSample, PreintegratedImu, RepropagationThreshold};
use crate::state::{NavState, Tangent, STATE_DIM, TH};

pub use aux::{
    dvl_residual, fbpf_route, gnss_residual, mcp_quaternion_residual, mcp_residual, predict_at,
    ps_residual, AuxPrediction, FbpfRoute,
};
pub use inertial::{imu_linearize, imu_residual, predict, INTERVAL_TOLERANCE};
pub use lbl::{lbl_geometry_rows, lbl_predicted_rho, BuoyArray, LblMeasurement};

/// Auxiliary sensor reading. Positions and velocities are ENU world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AuxValue {
    Gnss(Vector3<f64>),
    Dvl(Vector3<f64>),
    /// heading, counter-clockwise from East (rad)
    Mcp(f64),
    /// U coordinate, negative below the surface (m)
    Ps(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AuxKind {
    Gnss,
    Dvl,
    Mcp,
    Ps,
}

impl AuxValue {
    pub fn kind(&self) -> AuxKind {
        match self {
            AuxValue::Gnss(_) => AuxKind::Gnss,
            AuxValue::Dvl(_) => AuxKind::Dvl,
            AuxValue::Mcp(_) => AuxKind::Mcp,
            AuxValue::Ps(_) => AuxKind::Ps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxMeasurement {
    pub t: f64,
    pub value: AuxValue,
    /// Per-axis standard deviation; scalar sensors use the first component.
    pub sigma: Vector3<f64>,
}

impl AuxMeasurement {
    pub fn covariance(&self) -> DMatrix<f64> {
        let s2 = self.sigma.component_mul(&self.sigma);
        match self.value {
            AuxValue::Gnss(_) | AuxValue::Dvl(_) => DMatrix::from_diagonal(&DVector::from_column_slice(s2.as_slice())),
            AuxValue::Mcp(_) => DMatrix::identity(3, 3) * s2.x,
            AuxValue::Ps(_) => DMatrix::from_element(1, 1, s2.x),
        }
    }
}

/// A preintegrated delta together with the samples it was built from.
#[derive(Clone, Debug)]
pub struct ImuDelta {
    pub preint: PreintegratedImu,
    pub samples: Arc<[ImuSample]>,
}

impl ImuDelta {
    pub fn new(preint: PreintegratedImu, samples: Arc<[ImuSample]>) -> Self {
        Self { preint, samples }
    }
}

/// Information left behind by marginalized states, in square-root form:
/// residual `r_m + J_m·[x_i ⊖ x̄_i]` with unit covariance.
#[derive(Clone, Debug)]
pub struct MarginalPrior {
    pub linearization: Vec<NavState>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

#[derive(Clone, Debug)]
pub enum Payload {
    Prior { mean: NavState },
    Imu { delta: ImuDelta, gravity: Vector3<f64> },
    Lbl { rho: DVector<f64>, buoys: Arc<BuoyArray> },
    Aux { value: AuxValue, route: FbpfRoute, delta: ImuDelta, gravity: Vector3<f64> },
    Marginal(MarginalPrior),
    /// `Σ A_k·c(x_k) − b` with `c(x) = [p, v, log q, b_a, b_g]`.
    Linear { blocks: Vec<DMatrix<f64>>, b: DVector<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FactorKind {
    Prior,
    Imu,
    Lbl,
    Gnss,
    Dvl,
    Mcp,
    Ps,
    Marginal,
    Linear,
}

/// Residual and per-key Jacobians, each `dim × 15`.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct FactorRecord {
    pub keys: Vec<usize>,
    pub payload: Payload,
    pub covariance: DMatrix<f64>,
    /// Inverse Cholesky factor of `covariance`.
    whitener: DMatrix<f64>,
    /// Huber threshold on the whitened residual norm, if robustified.
    pub huber: Option<f64>,
}

impl FactorRecord {
    pub fn new(keys: Vec<usize>, payload: Payload, covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("factor covariance must be square and finite".into()));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("factor covariance is not positive definite".into()))?;
        let n = sym.nrows();
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::InvalidInput("factor covariance is not positive definite".into()))?;
        Ok(Self { keys, payload, covariance: sym, whitener, huber: None })
    }

    pub fn with_huber(mut self, k: Option<f64>) -> Self {
        self.huber = k;
        self
    }

    pub fn kind(&self) -> FactorKind {
        match &self.payload {
            Payload::Prior { .. } => FactorKind::Prior,
            Payload::Imu { .. } => FactorKind::Imu,
            Payload::Lbl { .. } => FactorKind::Lbl,
            Payload::Aux { value, .. } => match value.kind() {
                AuxKind::Gnss => FactorKind::Gnss,
                AuxKind::Dvl => FactorKind::Dvl,
                AuxKind::Mcp => FactorKind::Mcp,
                AuxKind::Ps => FactorKind::Ps,
            },
            Payload::Marginal(_) => FactorKind::Marginal,
            Payload::Linear { .. } => FactorKind::Linear,
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Unwhitened residual and Jacobians at `states` (one per key, in key order).
    pub fn linearize(&self, states: &[&NavState]) -> Result<Linearization> {
        if states.len() != self.keys.len() {
            return Err(Error::InvalidInput(format!(
                "factor expects {} states, got {}",
                self.keys.len(),
                states.len()
            )));
        }
        match &self.payload {
            Payload::Prior { mean } => {
                let (r, j) = prior_linearize(mean, states[0]);
                Ok(single(DVector::from_column_slice(r.as_slice()), j))
            }
            Payload::Imu { delta, gravity } => {
                let dt = states[1].t - states[0].t;
                let (r, ji, jj) = imu_linearize(states[0], states[1], &delta.preint, gravity, dt)?;
                Ok(Linearization {
                    residual: DVector::from_column_slice(r.as_slice()),
                    jacobians: vec![to_dyn(&ji), to_dyn(&jj)],
                })
            }
            Payload::Lbl { rho, buoys } => {
                let x = states[0];
                let r = lbl_predicted_rho(&x.p, buoys)? - rho;
                let e = lbl_geometry_rows(&x.p, buoys)?;
                let mut j = DMatrix::zeros(r.len(), STATE_DIM);
                j.view_mut((0, 0), (r.len(), 3)).copy_from(&e);
                Ok(Linearization { residual: r, jacobians: vec![j] })
            }
            Payload::Aux { value, route, delta, gravity } => {
                let (x, pre) = (states[0], &delta.preint);
                Ok(match value {
                    AuxValue::Gnss(z) => {
                        let (r, j) = gnss_residual(x, pre, route, z, gravity)?;
                        single(DVector::from_column_slice(r.as_slice()), to_dyn(&j))
                    }
                    AuxValue::Dvl(z) => {
                        let (r, j) = dvl_residual(x, pre, route, z, gravity)?;
                        single(DVector::from_column_slice(r.as_slice()), to_dyn(&j))
                    }
                    AuxValue::Mcp(yaw) => {
                        let (r, j) = mcp_residual(x, pre, route, *yaw, gravity)?;
                        single(DVector::from_column_slice(r.as_slice()), to_dyn(&j))
                    }
                    AuxValue::Ps(z) => {
                        let (r, j) = ps_residual(x, pre, route, *z, gravity)?;
                        single(DVector::from_element(1, r), to_dyn(&j))
                    }
                })
            }
            Payload::Marginal(m) => {
                let mut d = DVector::zeros(STATE_DIM * states.len());
                let mut jac = Vec::with_capacity(states.len());
                for (i, (x, lin)) in states.iter().zip(&m.linearization).enumerate() {
                    d.rows_mut(i * STATE_DIM, STATE_DIM).copy_from(&lin.local(x));
                    let cols = m.jacobian.columns(i * STATE_DIM, STATE_DIM);
                    jac.push(cols * to_dyn(&local_jacobian(lin, x)));
                }
                Ok(Linearization { residual: &m.residual + &m.jacobian * d, jacobians: jac })
            }
            Payload::Linear { blocks, b } => {
                let mut r = -b.clone();
                let mut jac = Vec::with_capacity(states.len());
                for (a, x) in blocks.iter().zip(states) {
                    r += a * coordinates(x);
                    let mut d = DMatrix::identity(STATE_DIM, STATE_DIM);
                    d.view_mut((TH, TH), (3, 3))
                        .copy_from(&right_jacobian_inv(&quat_log(&x.q)));
                    jac.push(a * d);
                }
                Ok(Linearization { residual: r, jacobians: jac })
            }
        }
    }

    /// Residual only.
    pub fn residual(&self, states: &[&NavState]) -> Result<DVector<f64>> {
        Ok(self.linearize(states)?.residual)
    }

    /// Whitened (and, if enabled, Huber-reweighted) linearization.
    pub fn whitened(&self, states: &[&NavState]) -> Result<Linearization> {
        let mut lin = self.linearize(states)?;
        if !matches!(self.payload, Payload::Marginal(_)) {
            lin.residual = &self.whitener * &lin.residual;
            for j in &mut lin.jacobians {
                *j = &self.whitener * &*j;
            }
        }
        if let Some(k) = self.huber {
            let n = lin.residual.norm();
            if n > k {
                let w = (k / n).sqrt();
                lin.residual *= w;
                for j in &mut lin.jacobians {
                    *j *= w;
                }
            }
        }
        Ok(lin)
    }

    /// Half the robustified squared whitened residual.
    pub fn cost(&self, states: &[&NavState]) -> Result<f64> {
        let mut r = self.linearize(states)?.residual;
        if !matches!(self.payload, Payload::Marginal(_)) {
            r = &self.whitener * r;
        }
        let s = r.norm_squared();
        Ok(0.5 * match self.huber {
            Some(k) if s.sqrt() > k => 2.0 * k * s.sqrt() - k * k,
            _ => s,
        })
    }

    /// Re-integrates the stored delta when the anchor bias has left the
    /// first-order validity region. Returns whether anything changed.
    pub fn refresh_bias(&mut self, anchor: &NavState, threshold: &RepropagationThreshold) -> Result<bool> {
        let delta = match &mut self.payload {
            Payload::Imu { delta, .. } | Payload::Aux { delta, .. } => delta,
            _ => return Ok(false),
        };
        let bias = Bias::new(anchor.ba, anchor.bg);
        if delta.preint.bias_corrected_delta(&bias, threshold).is_ok() {
            return Ok(false);
        }
        delta.preint = delta.preint.repropagate(&delta.samples, bias)?;
        if let Payload::Imu { delta, .. } = &self.payload {
            let cov = delta.preint.covariance.clone();
            let rebuilt = FactorRecord::new(self.keys.clone(), self.payload.clone(), DMatrix::from_column_slice(15, 15, cov.as_slice()))?;
            self.whitener = rebuilt.whitener;
            self.covariance = rebuilt.covariance;
        }
        Ok(true)
    }
}

fn single(residual: DVector<f64>, j: DMatrix<f64>) -> Linearization {
    Linearization { residual, jacobians: vec![j] }
}

fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// `[p, v, log q, b_a, b_g]`.
fn coordinates(x: &NavState) -> DVector<f64> {
    let mut c = DVector::zeros(STATE_DIM);
    c.rows_mut(0, 3).copy_from(&x.p);
    c.rows_mut(3, 3).copy_from(&x.v);
    c.rows_mut(6, 3).copy_from(&quat_log(&x.q));
    c.rows_mut(9, 3).copy_from(&x.ba);
    c.rows_mut(12, 3).copy_from(&x.bg);
    c
}

/// `∂ lin.local(x ⊞ δ) / ∂δ`.
fn local_jacobian(lin: &NavState, x: &NavState) -> SMatrix<f64, 15, 15> {
    let mut d = SMatrix::<f64, 15, 15>::identity();
    let th = quat_log(&(lin.q.inverse() * x.q));
    d.fixed_view_mut::<3, 3>(TH, TH).copy_from(&right_jacobian_inv(&th));
    d
}

fn prior_linearize(mean: &NavState, x: &NavState) -> (Tangent, DMatrix<f64>) {
    (mean.local(x), to_dyn(&local_jacobian(mean, x)))
}

pub fn prior_factor(key: usize, mean: NavState, covariance: DMatrix<f64>) -> Result<FactorRecord> {
    FactorRecord::new(vec![key], Payload::Prior { mean }, covariance)
}

pub fn imu_factor(key_i: usize, key_j: usize, delta: ImuDelta, gravity: Vector3<f64>) -> Result<FactorRecord> {
    let cov = DMatrix::from_column_slice(15, 15, delta.preint.covariance.as_slice());
    FactorRecord::new(vec![key_i, key_j], Payload::Imu { delta, gravity }, cov)
}

/// LBL factor; `extra_sigma` inflates each difference for systematic error.
pub fn lbl_factor(key: usize, z: &LblMeasurement, buoys: Arc<BuoyArray>, extra_sigma: f64) -> Result<FactorRecord> {
    z.validate(&buoys)?;
    FactorRecord::new(vec![key], Payload::Lbl { rho: z.rho.clone(), buoys }, z.covariance(extra_sigma))
}

pub fn aux_factor(
    key: usize,
    z: &AuxMeasurement,
    route: FbpfRoute,
    delta: ImuDelta,
    gravity: Vector3<f64>,
) -> Result<FactorRecord> {
    if delta.preint.direction != route.direction {
        return Err(Error::DirectionMismatch);
    }
    FactorRecord::new(vec![key], Payload::Aux { value: z.value, route, delta, gravity }, z.covariance())
}

pub fn marginal_factor(keys: Vec<usize>, prior: MarginalPrior) -> Result<FactorRecord> {
    let n = prior.residual.len();
    FactorRecord::new(keys, Payload::Marginal(prior), DMatrix::identity(n, n))
}

pub fn linear_factor(
    keys: Vec<usize>,
    blocks: Vec<DMatrix<f64>>,
    b: DVector<f64>,
    covariance: DMatrix<f64>,
) -> Result<FactorRecord> {
    if blocks.len() != keys.len() || blocks.iter().any(|a| a.nrows() != b.len() || a.ncols() != STATE_DIM) {
        return Err(Error::InvalidInput("linear factor blocks must be dim × 15, one per key".into()));
    }
    FactorRecord::new(keys, Payload::Linear { blocks, b }, covariance)
}

/// Diagonal covariance built from per-block standard deviations
/// `[σ_p, σ_v, σ_θ, σ_ba, σ_bg]`.
pub fn block_diagonal_covariance(sigmas: [f64; 5]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for (b, s) in sigmas.iter().enumerate() {
        c.view_mut((3 * b, 3 * b), (3, 3)).copy_from(&(Matrix3::identity() * (s * s)));
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn prior_at_mean_is_zero_and_offset_maps_through() {
        let mean = NavState::new(0.0, Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), UnitQuaternion::identity());
        let f = prior_factor(0, mean.clone(), block_diagonal_covariance([1.0; 5])).unwrap();
        assert_eq!(f.residual(&[&mean]).unwrap().norm(), 0.0);
        let mut x = mean.clone();
        x.p.x += 1.0;
        let r = f.residual(&[&x]).unwrap();
        assert_eq!(r.rows(0, 3).into_owned(), DVector::from_vec(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn prior_cost_is_half_mahalanobis() {
        let mean = NavState::new(0.0, Vector3::zeros(), Vector3::zeros(), UnitQuaternion::identity());
        let cov = block_diagonal_covariance([2.0, 1.0, 0.1, 0.01, 0.001]);
        let f = prior_factor(0, mean.clone(), cov.clone()).unwrap();
        let mut x = mean.clone();
        x.p = Vector3::new(1.0, -2.0, 0.5);
        x.v = Vector3::new(0.3, 0.0, 0.0);
        let d = mean.local(&x);
        let d = DVector::from_column_slice(d.as_slice());
        let oracle = 0.5 * (d.transpose() * cov.try_inverse().unwrap() * &d)[(0, 0)];
        assert!((f.cost(&[&x]).unwrap() - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let mean = NavState::new(0.0, Vector3::zeros(), Vector3::zeros(), UnitQuaternion::identity());
        let mut cov = block_diagonal_covariance([1.0; 5]);
        cov[(0, 0)] = -1.0;
        assert!(prior_factor(0, mean, cov).is_err());
    }
}
