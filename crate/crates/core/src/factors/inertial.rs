//! Inertial residual between consecutive keyframes.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geo::{right_jacobian, skew};
use crate::imu::{Direction, PreintegratedImu};
use crate::state::{NavState, BA, BG, P, TH, V};

pub type Residual15 = SVector<f64, 15>;
pub type Jacobian15 = SMatrix<f64, 15, 15>;

/// Tolerance on the match between the keyframe spacing and the preintegrated span.
pub const INTERVAL_TOLERANCE: f64 = 1e-9;

/// 2·vec(q) as a 3-vector.
pub(crate) fn twice_vec(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    2.0 * q.imag()
}

/// `∂ 2·vec(e ⊗ exp(ε)) / ∂ε` at ε = 0.
pub(crate) fn right_mul_jacobian(e: &UnitQuaternion<f64>) -> Matrix3<f64> {
    Matrix3::identity() * e.w + skew(&e.imag())
}

/// `∂ 2·vec(exp(−ε) ⊗ e) / ∂ε` at ε = 0.
pub(crate) fn left_inv_mul_jacobian(e: &UnitQuaternion<f64>) -> Matrix3<f64> {
    -Matrix3::identity() * e.w + skew(&e.imag())
}

fn check(pre: &PreintegratedImu, dt: f64) -> Result<()> {
    if pre.direction != Direction::Forward {
        return Err(Error::DirectionMismatch);
    }
    if (pre.span() - dt).abs() > INTERVAL_TOLERANCE {
        return Err(Error::IntervalMismatch {
            expected: pre.span(),
            got: dt,
        });
    }
    Ok(())
}

/// Stacked position, velocity, attitude and bias-difference residual between
/// `xi` and `xj`, using deltas bias-corrected to `xi`'s biases.
pub fn imu_residual(
    xi: &NavState,
    xj: &NavState,
    pre: &PreintegratedImu,
    g: &Vector3<f64>,
    dt: f64,
) -> Result<Residual15> {
    Ok(imu_linearize(xi, xj, pre, g, dt)?.0)
}

/// Residual plus Jacobians with respect to the tangents of `xi` and `xj`.
pub fn imu_linearize(
    xi: &NavState,
    xj: &NavState,
    pre: &PreintegratedImu,
    g: &Vector3<f64>,
    dt: f64,
) -> Result<(Residual15, Jacobian15, Jacobian15)> {
    check(pre, dt)?;
    let dba = xi.ba - pre.bias.accel;
    let dbg = xi.bg - pre.bias.gyro;
    let c = pre.corrected_unchecked(&dba, &dbg);

    let ri_t = xi.q.to_rotation_matrix().into_inner().transpose();
    let dp = xj.p - xi.p - xi.v * dt - 0.5 * g * dt * dt;
    let dv = xj.v - xi.v - g * dt;
    let e = xi.q.inverse() * xj.q * c.gamma.inverse();

    let mut r = Residual15::zeros();
    r.fixed_rows_mut::<3>(P).copy_from(&(ri_t * dp - c.alpha));
    r.fixed_rows_mut::<3>(V).copy_from(&(ri_t * dv - c.beta));
    r.fixed_rows_mut::<3>(TH).copy_from(&twice_vec(&e));
    r.fixed_rows_mut::<3>(BA).copy_from(&(xj.ba - xi.ba));
    r.fixed_rows_mut::<3>(BG).copy_from(&(xj.bg - xi.bg));

    let id = Matrix3::identity();
    let gamma_rot = c.gamma.to_rotation_matrix().into_inner();
    let phi = right_jacobian(&(pre.j_gamma_gyro() * dbg)) * pre.j_gamma_gyro();

    let mut ji = Jacobian15::zeros();
    let mut jj = Jacobian15::zeros();
    let put = |m: &mut Jacobian15, r: usize, c: usize, b: Matrix3<f64>| {
        m.fixed_view_mut::<3, 3>(r, c).copy_from(&b);
    };
    put(&mut ji, P, P, -ri_t);
    put(&mut ji, P, V, -ri_t * dt);
    put(&mut ji, P, TH, skew(&(ri_t * dp)));
    put(&mut ji, P, BA, -pre.j_alpha_accel());
    put(&mut ji, P, BG, -pre.j_alpha_gyro());
    put(&mut ji, V, V, -ri_t);
    put(&mut ji, V, TH, skew(&(ri_t * dv)));
    put(&mut ji, V, BA, -pre.j_beta_accel());
    put(&mut ji, V, BG, -pre.j_beta_gyro());
    put(&mut ji, TH, TH, left_inv_mul_jacobian(&e));
    put(&mut ji, TH, BG, -right_mul_jacobian(&e) * gamma_rot * phi);
    put(&mut ji, BA, BA, -id);
    put(&mut ji, BG, BG, -id);

    put(&mut jj, P, P, ri_t);
    put(&mut jj, V, V, ri_t);
    put(&mut jj, TH, TH, right_mul_jacobian(&e) * gamma_rot);
    put(&mut jj, BA, BA, id);
    put(&mut jj, BG, BG, id);
    Ok((r, ji, jj))
}

/// State at the end of `pre` predicted from `xi` (biases carried over).
pub fn predict(xi: &NavState, pre: &PreintegratedImu, g: &Vector3<f64>) -> NavState {
    let dt = pre.span();
    let c = pre.corrected_unchecked(&(xi.ba - pre.bias.accel), &(xi.bg - pre.bias.gyro));
    NavState {
        t: xi.t + dt,
        p: xi.p + xi.v * dt + 0.5 * g * dt * dt + xi.q * c.alpha,
        v: xi.v + g * dt + xi.q * c.beta,
        q: xi.q * c.gamma,
        ba: xi.ba,
        bg: xi.bg,
    }
}
