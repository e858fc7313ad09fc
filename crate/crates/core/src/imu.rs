//! IMU model and forward/backward preintegration.
//!
//! A [`PreintegratedImu`] accumulates the relative-motion deltas (α, β, γ)
//! between two instants independent of the absolute start state. Forward deltas
//! are anchored at the earlier instant and integrate samples in time order.
//! Backward deltas are anchored at the later instant and integrate the same
//! samples in reverse, with the bias-corrected inputs negated.
//!
//! The error state of a delta is `[δα, δβ, δθ, δb_a, δb_g]` with δθ a right
//! perturbation of γ. Its covariance and the full linearized transition (whose
//! bias columns are the bias Jacobians) are propagated alongside the mean.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{quat_exp, right_jacobian, skew, small_rotation};

pub type Matrix15 = SMatrix<f64, 15, 15>;
type Matrix15x12 = SMatrix<f64, 15, 12>;

const A: usize = 0;
const B: usize = 3;
const G: usize = 6;
const BA: usize = 9;
const BG: usize = 12;

/// One IMU reading. The sample holds over `[t, t_next)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// angular rate (rad/s)
    pub gyro: Vector3<f64>,
    /// specific force (m/s²)
    pub accel: Vector3<f64>,
}

/// Sensor error model. Densities are continuous-time; biases are 1σ magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseParams {
    /// gyroscope constant bias (rad/s)
    pub gyro_bias: f64,
    /// accelerometer constant bias (m/s²)
    pub accel_bias: f64,
    /// angular random walk (rad/√s)
    pub gyro_noise_density: f64,
    /// velocity random walk (m/s/√s)
    pub accel_noise_density: f64,
    /// gyroscope bias random walk (rad/s/√s)
    pub gyro_bias_walk: f64,
    /// accelerometer bias random walk (m/s²/√s)
    pub accel_bias_walk: f64,
}

impl ImuNoiseParams {
    pub fn zero() -> Self {
        Self {
            gyro_bias: 0.0,
            accel_bias: 0.0,
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_bias,
            self.accel_bias,
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        ];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput("IMU noise parameters must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

impl Default for ImuNoiseParams {
    /// Tactical-grade values: 25°/h gyro bias, 0.1°/√h ARW, 100 µg accel bias,
    /// 100 µg/√Hz VRW.
    fn default() -> Self {
        const UG: f64 = 1e-6 * crate::geo::GRAVITY_MAGNITUDE;
        Self {
            gyro_bias: 25f64.to_radians() / 3600.0,
            accel_bias: 100.0 * UG,
            gyro_noise_density: 0.1f64.to_radians() / 60.0,
            accel_noise_density: 100.0 * UG,
            gyro_bias_walk: 1e-6,
            accel_bias_walk: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Discretization of the delta recursion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Rotation at the start of each step (start in the direction of travel).
    #[default]
    Euler,
    /// Rotation at the middle of each step.
    Midpoint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl Bias {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }
}

/// Deltas after first-order bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectedDelta {
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: UnitQuaternion<f64>,
}

/// Largest bias change for which the first-order correction is trusted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepropagationThreshold {
    pub accel: f64,
    pub gyro: f64,
}

impl Default for RepropagationThreshold {
    fn default() -> Self {
        Self {
            accel: 0.05,
            gyro: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    /// Earliest instant covered. For backward deltas this moves toward the past.
    pub t_start: f64,
    /// Latest instant covered. For backward deltas this is the anchor.
    pub t_end: f64,
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: UnitQuaternion<f64>,
    /// Bias linearization point.
    pub bias: Bias,
    /// Covariance of `[δα, δβ, δθ, δb_a, δb_g]`.
    pub covariance: Matrix15,
    /// Linearized transition from the start of integration; its bias columns are
    /// the bias Jacobians.
    pub transition: Matrix15,
    pub direction: Direction,
    pub noise: ImuNoiseParams,
    pub scheme: Scheme,
}

impl PreintegratedImu {
    /// Identity delta anchored at `t`.
    pub fn new(bias: Bias, t: f64, direction: Direction) -> Self {
        Self {
            t_start: t,
            t_end: t,
            alpha: Vector3::zeros(),
            beta: Vector3::zeros(),
            gamma: UnitQuaternion::identity(),
            bias,
            covariance: Matrix15::zeros(),
            transition: Matrix15::identity(),
            direction,
            noise: ImuNoiseParams::zero(),
            scheme: Scheme::Euler,
        }
    }

    pub fn with_noise(mut self, noise: ImuNoiseParams) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Length of the covered interval (s).
    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn anchor_time(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.t_start,
            Direction::Backward => self.t_end,
        }
    }

    pub fn j_alpha_accel(&self) -> Matrix3<f64> {
        self.transition.fixed_view::<3, 3>(A, BA).into()
    }
    pub fn j_alpha_gyro(&self) -> Matrix3<f64> {
        self.transition.fixed_view::<3, 3>(A, BG).into()
    }
    pub fn j_beta_accel(&self) -> Matrix3<f64> {
        self.transition.fixed_view::<3, 3>(B, BA).into()
    }
    pub fn j_beta_gyro(&self) -> Matrix3<f64> {
        self.transition.fixed_view::<3, 3>(B, BG).into()
    }
    pub fn j_gamma_gyro(&self) -> Matrix3<f64> {
        self.transition.fixed_view::<3, 3>(G, BG).into()
    }

    /// Adds one sample held for `dt` seconds after the current end.
    pub fn integrate_forward(&mut self, s: &ImuSample, dt: f64) -> Result<()> {
        if self.direction != Direction::Forward {
            return Err(Error::DirectionMismatch);
        }
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        self.step(s, dt);
        self.t_end += dt;
        Ok(())
    }

    /// Adds one sample held for `dt` seconds before the current start.
    pub fn integrate_backward(&mut self, s: &ImuSample, dt: f64) -> Result<()> {
        if self.direction != Direction::Backward {
            return Err(Error::DirectionMismatch);
        }
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        self.step(s, dt);
        self.t_start -= dt;
        Ok(())
    }

    fn step(&mut self, s: &ImuSample, dt: f64) {
        let sign = self.direction.sign();
        let a = sign * (s.accel - self.bias.accel);
        let w = sign * (s.gyro - self.bias.gyro);
        let phi = w * dt;

        // Fraction of this step's rotation applied before the specific force is
        // rotated. Forward Euler uses the start-of-step attitude; the backward
        // recursion is the exact reversal of that, so it rotates first.
        let frac = match (self.scheme, self.direction) {
            (Scheme::Euler, Direction::Forward) => 0.0,
            (Scheme::Euler, Direction::Backward) => 1.0,
            (Scheme::Midpoint, _) => 0.5,
        };

        let dq = small_rotation(&phi);
        let (dq_acc, g_acc) = if frac == 0.0 {
            (UnitQuaternion::identity(), Matrix3::zeros())
        } else if frac == 1.0 {
            (dq, rotation_step_jacobian(&phi) * dt)
        } else {
            (
                small_rotation(&(phi * frac)),
                rotation_step_jacobian(&(phi * frac)) * (dt * frac),
            )
        };
        let g_full = rotation_step_jacobian(&phi) * dt;

        let r_acc = (self.gamma * dq_acc).to_rotation_matrix().into_inner();
        let dr_acc_t = dq_acc.to_rotation_matrix().into_inner().transpose();
        let dr_t = dq.to_rotation_matrix().into_inner().transpose();
        let ra = r_acc * a;
        let dt2 = dt * dt;

        // Linearized transition of this step.
        let mut f = Matrix15::identity();
        let ra_skew = r_acc * skew(&a);
        // δθ at the rotation used for the specific force
        let th_acc_th = dr_acc_t;
        let th_acc_bg = -sign * g_acc;
        f.fixed_view_mut::<3, 3>(A, B).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(A, G).copy_from(&(-0.5 * dt2 * ra_skew * th_acc_th));
        f.fixed_view_mut::<3, 3>(A, BA).copy_from(&(-0.5 * sign * dt2 * r_acc));
        f.fixed_view_mut::<3, 3>(A, BG).copy_from(&(-0.5 * dt2 * ra_skew * th_acc_bg));
        f.fixed_view_mut::<3, 3>(B, G).copy_from(&(-dt * ra_skew * th_acc_th));
        f.fixed_view_mut::<3, 3>(B, BA).copy_from(&(-sign * dt * r_acc));
        f.fixed_view_mut::<3, 3>(B, BG).copy_from(&(-dt * ra_skew * th_acc_bg));
        f.fixed_view_mut::<3, 3>(G, G).copy_from(&dr_t);
        f.fixed_view_mut::<3, 3>(G, BG).copy_from(&(-sign * g_full));

        // Noise input: [n_a, n_g, n_ba, n_bg].
        let mut gn = Matrix15x12::zeros();
        gn.fixed_view_mut::<3, 3>(A, 0).copy_from(&(0.5 * dt2 * r_acc));
        gn.fixed_view_mut::<3, 3>(B, 0).copy_from(&(dt * r_acc));
        gn.fixed_view_mut::<3, 3>(A, 3).copy_from(&(-0.5 * dt2 * ra_skew * g_acc));
        gn.fixed_view_mut::<3, 3>(B, 3).copy_from(&(-dt * ra_skew * g_acc));
        gn.fixed_view_mut::<3, 3>(G, 3).copy_from(&g_full);
        gn.fixed_view_mut::<3, 3>(BA, 6).copy_from(&Matrix3::identity());
        gn.fixed_view_mut::<3, 3>(BG, 9).copy_from(&Matrix3::identity());

        let n = &self.noise;
        let qd = [
            n.accel_noise_density.powi(2) / dt,
            n.gyro_noise_density.powi(2) / dt,
            n.accel_bias_walk.powi(2) * dt,
            n.gyro_bias_walk.powi(2) * dt,
        ];
        let mut gq = gn;
        for (block, var) in qd.iter().enumerate() {
            for c in 0..3 {
                gq.column_mut(block * 3 + c).scale_mut(*var);
            }
        }

        let p = f * self.covariance * f.transpose() + gq * gn.transpose();
        self.covariance = 0.5 * (p + p.transpose());
        self.transition = f * self.transition;

        self.alpha += self.beta * dt + 0.5 * ra * dt2;
        self.beta += ra * dt;
        self.gamma = UnitQuaternion::new_normalize((self.gamma * dq).into_inner());
    }

    /// Deltas re-expressed at `new_bias` through the stored bias Jacobians.
    pub fn bias_corrected_delta(
        &self,
        new_bias: &Bias,
        threshold: &RepropagationThreshold,
    ) -> Result<CorrectedDelta> {
        let dba = new_bias.accel - self.bias.accel;
        let dbg = new_bias.gyro - self.bias.gyro;
        if dba.norm() > threshold.accel || dbg.norm() > threshold.gyro {
            return Err(Error::RepropagationRequired);
        }
        Ok(self.corrected_unchecked(&dba, &dbg))
    }

    pub(crate) fn corrected_unchecked(&self, dba: &Vector3<f64>, dbg: &Vector3<f64>) -> CorrectedDelta {
        CorrectedDelta {
            alpha: self.alpha + self.j_alpha_accel() * dba + self.j_alpha_gyro() * dbg,
            beta: self.beta + self.j_beta_accel() * dba + self.j_beta_gyro() * dbg,
            gamma: self.gamma * quat_exp(&(self.j_gamma_gyro() * dbg)),
        }
    }

    /// Integrates the part of `samples` covering `[t0, t1]`. Forward deltas are
    /// anchored at `t0`, backward deltas at `t1`. Each sample holds until the
    /// next one (the last holds until `t1`).
    pub fn over_span(
        samples: &[ImuSample],
        t0: f64,
        t1: f64,
        bias: Bias,
        direction: Direction,
        noise: ImuNoiseParams,
        scheme: Scheme,
    ) -> Result<Self> {
        if t1 < t0 {
            return Err(Error::OutOfInterval { t: t1, start: t0, end: t0 });
        }
        if samples.first().map_or(true, |s| s.t > t0 + 1e-9) {
            return Err(Error::InvalidInput(format!(
                "IMU buffer does not cover the span start {t0}"
            )));
        }
        let anchor = match direction {
            Direction::Forward => t0,
            Direction::Backward => t1,
        };
        let mut pre = Self::new(bias, anchor, direction)
            .with_noise(noise)
            .with_scheme(scheme);
        let steps = span_steps(samples, t0, t1);
        match direction {
            Direction::Forward => {
                for (i, dt) in steps {
                    pre.integrate_forward(&samples[i], dt)?;
                }
                pre.t_end = t1;
            }
            Direction::Backward => {
                for (i, dt) in steps.into_iter().rev() {
                    pre.integrate_backward(&samples[i], dt)?;
                }
                pre.t_start = t0;
            }
        }
        Ok(pre)
    }

    /// Re-integrates `samples` at a new bias linearization point.
    pub fn repropagate(&self, samples: &[ImuSample], bias: Bias) -> Result<Self> {
        Self::over_span(
            samples,
            self.t_start,
            self.t_end,
            bias,
            self.direction,
            self.noise,
            self.scheme,
        )
    }
}

/// `(sample index, held duration)` pairs covering `[t0, t1)` in time order.
fn span_steps(samples: &[ImuSample], t0: f64, t1: f64) -> Vec<(usize, f64)> {
    const SLIVER: f64 = 1e-9;
    let start = samples.partition_point(|s| s.t <= t0).saturating_sub(1);
    let mut out = Vec::new();
    for i in start..samples.len() {
        let lo = samples[i].t.max(t0);
        if lo >= t1 - SLIVER {
            break;
        }
        let hi = samples.get(i + 1).map_or(t1, |n| n.t.min(t1));
        let dt = hi - lo;
        if dt > SLIVER {
            out.push((i, dt));
        }
    }
    out
}

/// Derivative of the rotation vector of `[1, ½φ]` (normalized) with respect to
/// φ, composed with the right Jacobian, so that perturbing φ by δ rotates the
/// step by `exp(J·δ)` on the right.
fn rotation_step_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let n = phi.norm();
    if n < 1e-9 {
        return Matrix3::identity();
    }
    // rotation vector ψ = φ·f(n), f(n) = 2·atan(n/2)/n
    let f = 2.0 * (0.5 * n).atan() / n;
    let df = (1.0 / (1.0 + 0.25 * n * n) - f) / n;
    let dpsi = Matrix3::identity() * f + phi * phi.transpose() * (df / n);
    right_jacobian(&(phi * f)) * dpsi
}
