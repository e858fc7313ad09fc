use nalgebra::{SVector, UnitQuaternion, Vector3};

use crate::geo::{quat_exp, quat_log};

/// Dimension of the navigation-state tangent space.
pub const STATE_DIM: usize = 15;

/// Offsets of the 3-blocks in the tangent ordering `[δp, δv, δθ, δb_a, δb_g]`.
pub const P: usize = 0;
pub const V: usize = 3;
pub const TH: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

pub type Tangent = SVector<f64, STATE_DIM>;

/// Full navigation state at one keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    pub t: f64,
    /// ENU position (m)
    pub p: Vector3<f64>,
    /// ENU velocity (m/s)
    pub v: Vector3<f64>,
    /// body-to-ENU attitude
    pub q: UnitQuaternion<f64>,
    /// accelerometer bias (m/s²)
    pub ba: Vector3<f64>,
    /// gyroscope bias (rad/s)
    pub bg: Vector3<f64>,
}

impl NavState {
    pub fn new(t: f64, p: Vector3<f64>, v: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Self {
            t,
            p,
            v,
            q,
            ba: Vector3::zeros(),
            bg: Vector3::zeros(),
        }
    }

    /// Manifold retraction: additive on p, v and biases, `q ⊗ exp(δθ)` on attitude.
    pub fn retract(&self, d: &Tangent) -> Self {
        let block = |o: usize| Vector3::new(d[o], d[o + 1], d[o + 2]);
        Self {
            t: self.t,
            p: self.p + block(P),
            v: self.v + block(V),
            q: self.q * quat_exp(&block(TH)),
            ba: self.ba + block(BA),
            bg: self.bg + block(BG),
        }
    }

    /// Tangent vector `d` with `self.retract(d) == other`.
    pub fn local(&self, other: &NavState) -> Tangent {
        let mut d = Tangent::zeros();
        d.fixed_rows_mut::<3>(P).copy_from(&(other.p - self.p));
        d.fixed_rows_mut::<3>(V).copy_from(&(other.v - self.v));
        d.fixed_rows_mut::<3>(TH)
            .copy_from(&quat_log(&(self.q.inverse() * other.q)));
        d.fixed_rows_mut::<3>(BA).copy_from(&(other.ba - self.ba));
        d.fixed_rows_mut::<3>(BG).copy_from(&(other.bg - self.bg));
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn retract_then_local_round_trips() {
        let s = NavState::new(
            3.0,
            Vector3::new(1.0, 2.0, -3.0),
            Vector3::new(0.5, 0.0, 0.1),
            quat_exp(&Vector3::new(0.1, -0.2, 1.3)),
        );
        let d = Tangent::from_fn(|i, _| (i as f64 - 7.0) * 0.01);
        let back = s.local(&s.retract(&d));
        assert_relative_eq!(back, d, epsilon = 1e-12);
    }
}
