//! Shared helpers for the integration tests.

#![allow(dead_code)]

pub mod chain;
pub mod jacobians;

use ilns::geo::small_rotation;
use ilns::imu::{Bias, Direction, ImuNoiseParams, ImuSample, PreintegratedImu, Scheme};
use ilns::state::NavState;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;

/// A random IMU buffer with jittered spacing, and the end of its span.
pub struct Buffer {
    pub samples: Vec<ImuSample>,
    pub t0: f64,
    pub t1: f64,
}

impl Buffer {
    /// `(sample, held duration)` pairs in time order.
    pub fn steps(&self) -> Vec<(ImuSample, f64)> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let next = self.samples.get(i + 1).map_or(self.t1, |n| n.t);
                (*s, next - s.t)
            })
            .collect()
    }
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_buffer(rng: &mut impl Rng, max_len: usize) -> Buffer {
    let n = rng.random_range(1..=max_len);
    let t0 = rng.random_range(0.0..100.0);
    let mut t = t0;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(ImuSample { t, gyro: random_vec(rng, 1.5), accel: random_vec(rng, 12.0) });
        t += rng.random_range(0.002..0.01);
    }
    Buffer { samples, t0, t1: t }
}

pub fn random_state(rng: &mut impl Rng, t: f64) -> NavState {
    let axis = random_vec(rng, 1.0);
    let mut x = NavState::new(t, random_vec(rng, 100.0), random_vec(rng, 2.0), UnitQuaternion::from_scaled_axis(axis * 3.0));
    x.ba = random_vec(rng, 0.05);
    x.bg = random_vec(rng, 0.01);
    x
}

pub fn random_bias(rng: &mut impl Rng) -> Bias {
    Bias::new(random_vec(rng, 0.05), random_vec(rng, 0.01))
}

/// Propagates the full state one sample at a time with the held-input Euler
/// step: world acceleration from the start-of-step attitude.
pub fn propagate_forward(x: &NavState, buf: &Buffer, g: &Vector3<f64>) -> NavState {
    let mut y = x.clone();
    for (s, dt) in buf.steps() {
        let a = y.q * (s.accel - y.ba) + g;
        y.p += y.v * dt + 0.5 * a * dt * dt;
        y.v += a * dt;
        y.q = UnitQuaternion::new_normalize((y.q * small_rotation(&((s.gyro - y.bg) * dt))).into_inner());
        y.t += dt;
    }
    y
}

/// Undoes `propagate_forward` one sample at a time, latest sample first.
pub fn propagate_backward(x: &NavState, buf: &Buffer, g: &Vector3<f64>) -> NavState {
    let mut y = x.clone();
    for (s, dt) in buf.steps().into_iter().rev() {
        y.q = UnitQuaternion::new_normalize((y.q * small_rotation(&(-(s.gyro - y.bg) * dt))).into_inner());
        let a = y.q * (s.accel - y.ba) + g;
        y.v -= a * dt;
        y.p -= y.v * dt + 0.5 * a * dt * dt;
        y.t -= dt;
    }
    y
}

/// Largest absolute difference over position, velocity and attitude.
pub fn state_gap(a: &NavState, b: &NavState) -> f64 {
    let dq = 2.0 * (a.q.inverse() * b.q).imag().norm();
    (a.p - b.p).amax().max((a.v - b.v).amax()).max(dq)
}

/// Closed-form deltas for a constant body rate `w` about z and constant body
/// specific force `f` over `T` seconds.
pub fn continuous_deltas(w: f64, f: Vector3<f64>, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (s, c) = (w * t).sin_cos();
    let beta = Vector3::new(
        f.x * s / w + f.y * (c - 1.0) / w,
        f.x * (1.0 - c) / w + f.y * s / w,
        f.z * t,
    );
    let alpha = Vector3::new(
        f.x * (1.0 - c) / (w * w) + f.y * (s / (w * w) - t / w),
        f.x * (t / w - s / (w * w)) + f.y * (1.0 - c) / (w * w),
        0.5 * f.z * t * t,
    );
    (alpha, beta)
}

/// Error of forward Euler preintegration against the closed form, with step `dt`.
pub fn euler_error(dt: f64) -> f64 {
    let (w, f, t) = (0.8, Vector3::new(1.5, -0.7, 0.3), 2.0);
    let n = (t / dt).round() as usize;
    let samples: Vec<_> = (0..n).map(|i| ImuSample { t: i as f64 * dt, gyro: Vector3::new(0.0, 0.0, w), accel: f }).collect();
    let pre = PreintegratedImu::over_span(&samples, 0.0, t, Bias::default(), Direction::Forward, ImuNoiseParams::zero(), Scheme::Euler).unwrap();
    let (alpha, beta) = continuous_deltas(w, f, t);
    (pre.alpha - alpha).norm() + (pre.beta - beta).norm()
}
