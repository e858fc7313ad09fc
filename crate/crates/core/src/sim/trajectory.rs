//! Truth trajectories from piecewise motion scripts.
//!
//! Commands (horizontal acceleration, yaw rate, vertical acceleration) are
//! piecewise constant, so speed, heading and vertical rate are piecewise
//! linear in time. The body stays level with its x axis along the heading.
//! Position and velocity advance by the same Euler step the preintegration
//! uses, with the world acceleration of each step chosen to land exactly on
//! the analytic velocity at the next sample. The gyro rate of each step is
//! chosen so the quaternion step reproduces the commanded heading change
//! exactly. Noise-free IMU samples therefore reintegrate to the truth.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{from_yaw_pitch_roll, gravity_enu, small_rotation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// Hold the current velocity and heading.
    Cruise { duration: f64 },
    /// Hold still (identical to cruise; reads better at zero speed).
    Static { duration: f64 },
    /// Ramp horizontal speed linearly to `target_speed` (m/s).
    Accelerate { duration: f64, target_speed: f64 },
    /// Constant yaw rate, positive counter-clockwise (left).
    Turn { duration: f64, rate_deg_s: f64 },
    /// Ramp the vertical rate linearly to `target_rate` (m/s, positive up).
    Heave { duration: f64, target_rate: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Cruise { duration }
            | Segment::Static { duration }
            | Segment::Accelerate { duration, .. }
            | Segment::Turn { duration, .. }
            | Segment::Heave { duration, .. } => duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionScript {
    pub initial_position: Vector3<f64>,
    /// Heading counter-clockwise from East (rad).
    pub initial_heading: f64,
    pub initial_speed: f64,
    pub segments: Vec<Segment>,
    /// Mission length (s); the script is padded with cruise or truncated to it.
    pub duration: f64,
}

impl MotionScript {
    /// Static alignment, sinking to 95 m, left and right turns at 3°/s, a speed
    /// change, then floating back to the surface at 1783 s.
    pub fn complex_segments() -> Vec<Segment> {
        use Segment::*;
        vec![
            Static { duration: 17.0 },
            Accelerate { duration: 10.0, target_speed: 0.6 },
            Cruise { duration: 273.0 },
            Heave { duration: 10.0, target_rate: -0.5 },
            Cruise { duration: 180.0 },
            Heave { duration: 10.0, target_rate: 0.0 },
            Cruise { duration: 200.0 },
            Turn { duration: 30.0, rate_deg_s: 3.0 },
            Cruise { duration: 170.0 },
            Turn { duration: 60.0, rate_deg_s: -3.0 },
            Cruise { duration: 140.0 },
            Accelerate { duration: 30.0, target_speed: 1.0 },
            Cruise { duration: 170.0 },
            Turn { duration: 30.0, rate_deg_s: 3.0 },
            Cruise { duration: 170.0 },
            Accelerate { duration: 10.0, target_speed: 0.6 },
            Cruise { duration: 173.0 },
            Heave { duration: 5.0, target_rate: 1.0 },
            Cruise { duration: 90.0 },
            Heave { duration: 5.0, target_rate: 0.0 },
            Cruise { duration: 117.0 },
            Turn { duration: 30.0, rate_deg_s: 3.0 },
            Cruise { duration: 287.0 },
        ]
    }

    /// Static alignment, then a straight line at 0.6 m/s on the surface.
    pub fn stable_segments(duration: f64) -> Vec<Segment> {
        vec![
            Segment::Static { duration: 17.0 },
            Segment::Accelerate { duration: 10.0, target_speed: 0.6 },
            Segment::Cruise { duration: (duration - 27.0).max(0.0) },
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    /// Specific force held over the following step (body, m/s²).
    pub specific_force: Vector3<f64>,
    /// Angular rate held over the following step (body, rad/s).
    pub rate: Vector3<f64>,
}

/// Truth sampled at the IMU rate.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub rate: f64,
    pub samples: Vec<TruthSample>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Position, velocity and attitude at `t`, advancing the containing sample
    /// by the same held-input step the IMU model uses.
    pub fn at(&self, t: f64) -> Option<(Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>)> {
        let first = self.samples.first()?;
        if t < first.t - 1e-9 {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t <= t + 1e-9).checked_sub(1)?;
        let s = &self.samples[i];
        let tau = t - s.t;
        if tau.abs() <= 1e-9 {
            return Some((s.p, s.v, s.q));
        }
        if i + 1 == self.samples.len() && tau > 1.0 / self.rate + 1e-9 {
            return None;
        }
        let a = s.q * s.specific_force + gravity_enu();
        Some((s.p + s.v * tau + 0.5 * a * tau * tau, s.v + a * tau, s.q * small_rotation(&(s.rate * tau))))
    }
}

/// Kinematic state of the script at a segment boundary.
#[derive(Clone, Copy)]
struct Knot {
    t: f64,
    speed: f64,
    heading: f64,
    climb: f64,
    d_speed: f64,
    d_heading: f64,
    d_climb: f64,
}

impl Knot {
    fn velocity(&self, t: f64) -> Vector3<f64> {
        let dt = t - self.t;
        let s = self.speed + self.d_speed * dt;
        let h = self.heading + self.d_heading * dt;
        Vector3::new(s * h.cos(), s * h.sin(), self.climb + self.d_climb * dt)
    }
}

fn knots(script: &MotionScript) -> Vec<Knot> {
    let mut out = Vec::new();
    let (mut t, mut speed, mut heading, mut climb) = (0.0, script.initial_speed, script.initial_heading, 0.0);
    let padded = script.segments.iter().map(|s| s.duration()).sum::<f64>();
    let pad = Segment::Cruise { duration: (script.duration - padded).max(0.0) };
    for seg in script.segments.iter().chain(std::iter::once(&pad)) {
        let d = seg.duration();
        if d <= 0.0 {
            continue;
        }
        let (ds, dh, dc) = match *seg {
            Segment::Cruise { .. } | Segment::Static { .. } => (0.0, 0.0, 0.0),
            Segment::Accelerate { target_speed, .. } => ((target_speed - speed) / d, 0.0, 0.0),
            Segment::Turn { rate_deg_s, .. } => (0.0, rate_deg_s.to_radians(), 0.0),
            Segment::Heave { target_rate, .. } => (0.0, 0.0, (target_rate - climb) / d),
        };
        out.push(Knot { t, speed, heading, climb, d_speed: ds, d_heading: dh, d_climb: dc });
        t += d;
        speed += ds * d;
        heading += dh * d;
        climb += dc * d;
    }
    out
}

/// Integrates `script` at `rate` Hz over its duration.
pub fn build_trajectory(script: &MotionScript, rate: f64) -> Result<Trajectory> {
    if script.segments.is_empty() {
        return Err(Error::EmptyScript);
    }
    if !(rate > 0.0) || !(script.duration > 0.0) {
        return Err(Error::InvalidInput("rate and duration must be positive".into()));
    }
    if script.segments.iter().any(|s| !(s.duration() >= 0.0)) {
        return Err(Error::InvalidInput("segment durations must be non-negative".into()));
    }
    let knots = knots(script);
    let knot_at = |t: f64| {
        let i = knots.partition_point(|k| k.t <= t + 1e-9).saturating_sub(1);
        knots[i]
    };
    let n = (script.duration * rate).round() as usize;
    let dt = 1.0 / rate;
    let g = gravity_enu();

    let mut samples = Vec::with_capacity(n);
    let mut p = script.initial_position;
    let mut v = knot_at(0.0).velocity(0.0);
    let mut q = from_yaw_pitch_roll(script.initial_heading, 0.0, 0.0);
    for i in 0..n {
        let t = i as f64 / rate;
        let t1 = (i + 1) as f64 / rate;
        let k = knot_at(t);
        let a = (k.velocity(t1) - v) / dt;
        // body yaw rate whose Euler quaternion step turns by exactly ψ̇·dt
        let turn = k.d_heading * dt;
        let rate_z = 2.0 * (0.5 * turn).tan() / dt;
        let w = Vector3::new(0.0, 0.0, rate_z);
        let f = q.inverse() * (a - g);
        samples.push(TruthSample { t, p, v, q, specific_force: f, rate: w });
        p += v * dt + 0.5 * a * dt * dt;
        v += a * dt;
        q = UnitQuaternion::new_normalize((q * small_rotation(&(w * dt))).into_inner());
    }
    Ok(Trajectory { rate, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::yaw_of;

    fn script(segments: Vec<Segment>, heading: f64, speed: f64) -> MotionScript {
        let duration = segments.iter().map(|s| s.duration()).sum();
        MotionScript { initial_position: Vector3::zeros(), initial_heading: heading, initial_speed: speed, segments, duration }
    }

    #[test]
    fn cruise_east() {
        let tr = build_trajectory(&script(vec![Segment::Cruise { duration: 10.0 }], 0.0, 0.6), 200.0).unwrap();
        let (p, _, _) = tr.at(10.0).unwrap();
        assert!((p - Vector3::new(6.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn turn_changes_heading_exactly() {
        let tr = build_trajectory(&script(vec![Segment::Turn { duration: 30.0, rate_deg_s: 3.0 }], 0.2, 0.6), 200.0).unwrap();
        let (_, _, q) = tr.at(30.0).unwrap();
        assert!((yaw_of(&q) - (0.2 + 90f64.to_radians())).abs() < 1e-9);
    }

    #[test]
    fn default_mission_sample_count() {
        let s = MotionScript {
            initial_position: Vector3::zeros(),
            initial_heading: 90f64.to_radians(),
            initial_speed: 0.0,
            segments: MotionScript::complex_segments(),
            duration: 2217.0,
        };
        let total: f64 = s.segments.iter().map(|x| x.duration()).sum();
        assert_eq!(total, 2217.0);
        let tr = build_trajectory(&s, 200.0).unwrap();
        assert_eq!(tr.samples.len(), 443_400);
        // dive bottom and surfacing time
        let (p, _, _) = tr.at(1000.0).unwrap();
        assert!((p.z + 95.0).abs() < 1e-6);
        let (p, v, _) = tr.at(1783.0).unwrap();
        assert!(p.z.abs() < 1e-6 && v.z.abs() < 1e-9);
    }

    #[test]
    fn empty_script_rejected() {
        assert!(matches!(build_trajectory(&script(vec![], 0.0, 0.0), 200.0), Err(Error::EmptyScript)));
    }

    #[test]
    fn velocity_is_derivative_of_position() {
        let tr = build_trajectory(
            &script(vec![Segment::Accelerate { duration: 5.0, target_speed: 1.0 }, Segment::Turn { duration: 5.0, rate_deg_s: 10.0 }], 0.0, 0.0),
            200.0,
        )
        .unwrap();
        for w in tr.samples.windows(2) {
            let fd = (w[1].p - w[0].p) * 200.0;
            assert!((fd - 0.5 * (w[0].v + w[1].v)).norm() < 1e-9);
        }
    }
}
