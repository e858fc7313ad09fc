//! Time-offset sensor factors anchored at the nearer keyframe through a
//! forward or backward preintegrated delta.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geo::{right_jacobian, skew, wrap_angle, yaw_gradient, yaw_of};
use crate::imu::{Direction, PreintegratedImu};
use crate::state::{NavState, BA, BG, P, TH, V};

use super::inertial::INTERVAL_TOLERANCE;

pub type Row3x15 = SMatrix<f64, 3, 15>;
pub type Row1x15 = SMatrix<f64, 1, 15>;

/// Which keyframe an off-epoch measurement attaches to, and how far from it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FbpfRoute {
    /// Forward anchors at the earlier keyframe, Backward at the later one.
    pub direction: Direction,
    /// Distance from the anchor to the measurement (s).
    pub offset: f64,
}

/// Routes a measurement at `t_j ∈ [t_k, t_k1]` to the nearer keyframe. Ties go Forward.
pub fn fbpf_route(t_j: f64, t_k: f64, t_k1: f64) -> Result<FbpfRoute> {
    if !(t_k <= t_j && t_j <= t_k1) {
        return Err(Error::OutOfInterval { t: t_j, start: t_k, end: t_k1 });
    }
    let (fwd, bwd) = (t_j - t_k, t_k1 - t_j);
    Ok(if fwd <= bwd {
        FbpfRoute { direction: Direction::Forward, offset: fwd }
    } else {
        FbpfRoute { direction: Direction::Backward, offset: bwd }
    })
}

/// Position, velocity and attitude at the measurement instant predicted from
/// the anchor, with Jacobians of position and velocity on the anchor tangent.
pub struct AuxPrediction {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub jp: Row3x15,
    pub jv: Row3x15,
    /// Bias-corrected γ and the Jacobian of its right perturbation on δb_g.
    gamma: UnitQuaternion<f64>,
    gamma_bg: Matrix3<f64>,
}

pub fn predict_at(
    anchor: &NavState,
    pre: &PreintegratedImu,
    route: &FbpfRoute,
    g: &Vector3<f64>,
) -> Result<AuxPrediction> {
    if pre.direction != route.direction {
        return Err(Error::DirectionMismatch);
    }
    if (pre.span() - route.offset).abs() > INTERVAL_TOLERANCE {
        return Err(Error::IntervalMismatch { expected: pre.span(), got: route.offset });
    }
    let s = match route.direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let dt = route.offset;
    let dbg = anchor.bg - pre.bias.gyro;
    let c = pre.corrected_unchecked(&(anchor.ba - pre.bias.accel), &dbg);
    let r = anchor.q.to_rotation_matrix().into_inner();

    let p = anchor.p + s * anchor.v * dt + 0.5 * g * dt * dt + s * (r * c.alpha);
    let v = anchor.v + s * g * dt + r * c.beta;

    let mut jp = Row3x15::zeros();
    jp.fixed_view_mut::<3, 3>(0, P).copy_from(&Matrix3::identity());
    jp.fixed_view_mut::<3, 3>(0, V).copy_from(&(Matrix3::identity() * (s * dt)));
    jp.fixed_view_mut::<3, 3>(0, TH).copy_from(&(-s * r * skew(&c.alpha)));
    jp.fixed_view_mut::<3, 3>(0, BA).copy_from(&(s * r * pre.j_alpha_accel()));
    jp.fixed_view_mut::<3, 3>(0, BG).copy_from(&(s * r * pre.j_alpha_gyro()));

    let mut jv = Row3x15::zeros();
    jv.fixed_view_mut::<3, 3>(0, V).copy_from(&Matrix3::identity());
    jv.fixed_view_mut::<3, 3>(0, TH).copy_from(&(-r * skew(&c.beta)));
    jv.fixed_view_mut::<3, 3>(0, BA).copy_from(&(r * pre.j_beta_accel()));
    jv.fixed_view_mut::<3, 3>(0, BG).copy_from(&(r * pre.j_beta_gyro()));

    Ok(AuxPrediction {
        p,
        v,
        q: anchor.q * c.gamma,
        jp,
        jv,
        gamma: c.gamma,
        gamma_bg: right_jacobian(&(pre.j_gamma_gyro() * dbg)) * pre.j_gamma_gyro(),
    })
}

/// `z − p̂` and its Jacobian on the anchor tangent.
pub fn gnss_residual(
    anchor: &NavState,
    pre: &PreintegratedImu,
    route: &FbpfRoute,
    z: &Vector3<f64>,
    g: &Vector3<f64>,
) -> Result<(Vector3<f64>, Row3x15)> {
    let pr = predict_at(anchor, pre, route, g)?;
    Ok((z - pr.p, -pr.jp))
}

/// `z − v̂` (world-frame velocity) and its Jacobian on the anchor tangent.
pub fn dvl_residual(
    anchor: &NavState,
    pre: &PreintegratedImu,
    route: &FbpfRoute,
    z: &Vector3<f64>,
    g: &Vector3<f64>,
) -> Result<(Vector3<f64>, Row3x15)> {
    let pr = predict_at(anchor, pre, route, g)?;
    Ok((z - pr.v, -pr.jv))
}

/// `z − e₃·p̂` with `z` the U coordinate (negative below the surface).
pub fn ps_residual(
    anchor: &NavState,
    pre: &PreintegratedImu,
    route: &FbpfRoute,
    z: f64,
    g: &Vector3<f64>,
) -> Result<(f64, Row1x15)> {
    let pr = predict_at(anchor, pre, route, g)?;
    Ok((z - pr.p.z, -pr.jp.fixed_rows::<1>(2).into_owned()))
}

/// Attitude residual `2·vec(q_a⁻¹ ⊗ q_mcp ⊗ γ⁻¹)`.
pub fn mcp_quaternion_residual(
    q_anchor: &UnitQuaternion<f64>,
    q_mcp: &UnitQuaternion<f64>,
    gamma: &UnitQuaternion<f64>,
) -> Vector3<f64> {
    2.0 * (q_anchor.inverse() * q_mcp * gamma.inverse()).imag()
}

/// Compass factor. The measured attitude takes `yaw` from the compass and roll
/// and pitch from the predicted attitude, which reduces the quaternion
/// residual to `2·sin(Δψ/2)·R_aᵀe₃`. On the backward route γ enters negated,
/// which flips the sign.
pub fn mcp_residual(
    anchor: &NavState,
    pre: &PreintegratedImu,
    route: &FbpfRoute,
    yaw: f64,
    g: &Vector3<f64>,
) -> Result<(Vector3<f64>, Row3x15)> {
    let pr = predict_at(anchor, pre, route, g)?;
    let s = match route.direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let dpsi = wrap_angle(yaw - yaw_of(&pr.q));
    let u = anchor.q.inverse() * Vector3::z();
    let (sh, ch) = (0.5 * dpsi).sin_cos();
    let r = s * 2.0 * sh * u;

    let grad = yaw_gradient(&pr.q).transpose();
    let gamma_rot_t = pr.gamma.to_rotation_matrix().into_inner().transpose();
    let dpsi_th = -grad * gamma_rot_t;
    let dpsi_bg = -grad * pr.gamma_bg;

    let mut j = Row3x15::zeros();
    j.fixed_view_mut::<3, 3>(0, TH)
        .copy_from(&(s * (ch * u * dpsi_th + 2.0 * sh * skew(&u))));
    j.fixed_view_mut::<3, 3>(0, BG).copy_from(&(s * ch * u * dpsi_bg));
    Ok((r, j))
}
