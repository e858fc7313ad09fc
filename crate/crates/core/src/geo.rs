//! Frames, geodesy and rotation helpers.
//!
//! All estimation runs in a local East-North-Up (ENU) tangent frame anchored at
//! the vehicle start point. Geodetic coordinates only appear at GNSS ingestion
//! and inside the EKF baseline, which mechanizes in latitude/longitude/height.
//!
//! Rotations are body-to-world unit quaternions. Tangent-space perturbations are
//! applied on the right (`q ⊗ exp(δθ)`), i.e. they live in the body frame.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Standard gravity magnitude (m/s²).
pub const GRAVITY_MAGNITUDE: f64 = 9.80665;

/// A point expressed in the local ENU frame (m).
pub type EnuPoint = Vector3<f64>;
/// A free vector expressed in the local ENU frame.
pub type EnuVector = Vector3<f64>;

/// Gravitational acceleration in ENU: points along −U.
pub fn gravity_enu() -> EnuVector {
    Vector3::new(0.0, 0.0, -GRAVITY_MAGNITUDE)
}

/// Geodetic position. Latitude and longitude in radians, height in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lla {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl Lla {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self> {
        if !(lat.is_finite() && lon.is_finite() && alt.is_finite()) {
            return Err(Error::InvalidInput("non-finite geodetic coordinate".into()));
        }
        if lat.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput(format!("latitude {lat} rad out of range")));
        }
        Ok(Self {
            lat,
            lon: wrap_angle(lon),
            alt,
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, alt: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), alt)
    }
}

/// Reference ellipsoid, described by its semi-major axis and first eccentricity squared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub semi_major: f64,
    pub ecc2: f64,
}

impl Ellipsoid {
    pub const WGS84: Ellipsoid = Ellipsoid {
        semi_major: 6_378_137.0,
        ecc2: 6.694_379_990_14e-3,
    };

    pub fn eccentricity(&self) -> f64 {
        self.ecc2.sqrt()
    }

    /// Radius of curvature in the meridian (north-south) plane.
    pub fn meridian_radius(&self, lat: f64) -> f64 {
        let w2 = 1.0 - self.ecc2 * lat.sin().powi(2);
        self.semi_major * (1.0 - self.ecc2) / (w2 * w2.sqrt())
    }

    /// Radius of curvature in the prime vertical (east-west) plane.
    pub fn prime_vertical_radius(&self, lat: f64) -> f64 {
        self.semi_major / (1.0 - self.ecc2 * lat.sin().powi(2)).sqrt()
    }
}

impl Default for Ellipsoid {
    fn default() -> Self {
        Self::WGS84
    }
}

pub fn lla_to_ecef(p: &Lla, ell: &Ellipsoid) -> Vector3<f64> {
    let n = ell.prime_vertical_radius(p.lat);
    let (sl, cl) = p.lat.sin_cos();
    let (so, co) = p.lon.sin_cos();
    Vector3::new(
        (n + p.alt) * cl * co,
        (n + p.alt) * cl * so,
        (n * (1.0 - ell.ecc2) + p.alt) * sl,
    )
}

/// Inverse of [`lla_to_ecef`] by fixed-point iteration on latitude.
pub fn ecef_to_lla(x: &Vector3<f64>, ell: &Ellipsoid) -> Lla {
    let lon = x.y.atan2(x.x);
    let r = x.x.hypot(x.y);
    let mut lat = x.z.atan2(r * (1.0 - ell.ecc2));
    for _ in 0..20 {
        let n = ell.prime_vertical_radius(lat);
        let (sl, cl) = lat.sin_cos();
        let alt = if cl.abs() > 1e-3 {
            r / cl - n
        } else {
            x.z / sl - n * (1.0 - ell.ecc2)
        };
        let next = x.z.atan2(r * (1.0 - ell.ecc2 * n / (n + alt)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let n = ell.prime_vertical_radius(lat);
    let (sl, cl) = lat.sin_cos();
    let alt = if cl.abs() > 1e-3 {
        r / cl - n
    } else {
        x.z / sl - n * (1.0 - ell.ecc2)
    };
    Lla { lat, lon, alt }
}

/// Rotation taking ECEF vectors into the ENU frame at `origin`.
pub fn ecef_to_enu_rotation(origin: &Lla) -> Matrix3<f64> {
    let (sl, cl) = origin.lat.sin_cos();
    let (so, co) = origin.lon.sin_cos();
    Matrix3::new(
        -so, co, 0.0, //
        -sl * co, -sl * so, cl, //
        cl * co, cl * so, sl,
    )
}

pub fn lla_to_local_enu(p: &Lla, origin: &Lla, ell: &Ellipsoid) -> EnuPoint {
    if p == origin {
        return EnuPoint::zeros();
    }
    let d = lla_to_ecef(p, ell) - lla_to_ecef(origin, ell);
    ecef_to_enu_rotation(origin) * d
}

pub fn local_enu_to_lla(p: &EnuPoint, origin: &Lla, ell: &Ellipsoid) -> Lla {
    let ecef = lla_to_ecef(origin, ell) + ecef_to_enu_rotation(origin).transpose() * p;
    ecef_to_lla(&ecef, ell)
}

/// First-order map from a geodetic perturbation (δL, δλ, δh) to the ECEF
/// displacement (δx, δy, δz). Columns are ordered (δL, δλ, δh).
///
/// Latitude terms use the meridian radius and longitude terms the prime-vertical
/// radius; with those radii the linear combinations are the exact Jacobian of
/// [`lla_to_ecef`].
pub fn geodetic_jacobian(reference: &Lla, ell: &Ellipsoid) -> Matrix3<f64> {
    let m = ell.meridian_radius(reference.lat);
    let n = ell.prime_vertical_radius(reference.lat);
    let h = reference.alt;
    let (sl, cl) = reference.lat.sin_cos();
    let (so, co) = reference.lon.sin_cos();
    Matrix3::new(
        -(m + h) * sl * co, -(n + h) * cl * so, cl * co, //
        -(m + h) * sl * so, (n + h) * cl * co, cl * so, //
        (m + h) * cl, 0.0, sl,
    )
}

pub fn geodetic_delta_to_cartesian(
    d_lat: f64,
    d_lon: f64,
    d_alt: f64,
    reference: &Lla,
    ell: &Ellipsoid,
) -> Vector3<f64> {
    geodetic_jacobian(reference, ell) * Vector3::new(d_lat, d_lon, d_alt)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn quat_exp(theta: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = theta.norm();
    let half = 0.5 * angle;
    let (w, k) = if angle < 1e-8 {
        // second-order series of cos(θ/2) and sin(θ/2)/θ
        (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
    } else {
        (half.cos(), half.sin() / angle)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * theta.x, k * theta.y, k * theta.z))
}

/// Logarithm map, returning the rotation vector with angle in [0, π].
pub fn quat_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = hemisphere(q);
    let v = q.imag();
    let n = v.norm();
    let w = q.w;
    if n < 1e-8 {
        // atan2(n, w) / n ≈ 1/w for tiny n
        return v * (2.0 / w);
    }
    v * (2.0 * n.atan2(w) / n)
}

/// Returns the representative of `q` with non-negative scalar part.
pub fn hemisphere(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// One Euler step of the quaternion kinematics, `[1, ½ω·dt]` renormalized.
pub fn small_rotation(omega_dt: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(
        1.0,
        0.5 * omega_dt.x,
        0.5 * omega_dt.y,
        0.5 * omega_dt.z,
    ))
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ)·Exp(Jr(φ)·δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    if t < 1e-6 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = t * t;
    Matrix3::identity() - (1.0 - t.cos()) / t2 * k + (t - t.sin()) / (t2 * t) * k * k
}

pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    if t < 1e-6 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let t2 = t * t;
    let c = 1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin());
    Matrix3::identity() + 0.5 * k + c * k * k
}

/// Heading about +U, measured counter-clockwise from East (z-y-x Euler yaw).
pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}

/// Gradient of [`yaw_of`] with respect to a right perturbation `q ⊗ exp(δθ)`.
pub fn yaw_gradient(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let r = *q.to_rotation_matrix().matrix();
    let (x, y) = (r[(0, 0)], r[(1, 0)]);
    // d(first column) = −R·[e1]×·δθ
    let d = -r * skew(&Vector3::x());
    (x * d.row(1) - y * d.row(0)).transpose() / (x * x + y * y)
}

/// Builds a body-to-ENU attitude from z-y-x Euler angles (rad).
pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), roll)
}
