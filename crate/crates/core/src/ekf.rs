//! Error-state Kalman filter baseline.
//!
//! The nominal state is mechanized from every IMU sample; the error state
//! `[δθ, δv, δ(L, λ, h), b_g, b_a, δR]` carries attitude (body frame, right
//! perturbation), ENU velocity, geodetic position, gyro and accelerometer bias
//! and one systematic error per slant-range difference. After each update the
//! estimated error is folded into the nominal state and reset to zero.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{lbl_geometry_rows, lbl_predicted_rho, AuxMeasurement, AuxValue, BuoyArray, LblMeasurement};
use crate::geo::{
    ecef_to_enu_rotation, geodetic_jacobian, gravity_enu, lla_to_local_enu, quat_exp, skew, small_rotation,
    wrap_angle, yaw_gradient, yaw_of, Ellipsoid, Lla,
};
use crate::config::DvlFrame;
use crate::imu::{ImuNoiseParams, ImuSample};
use crate::io::{Aiding, LogHeader, MeasurementLog, Record};
use crate::pipeline::{FusionRun, SensorSet};
use crate::state::NavState;

/// Offsets of the error-state blocks.
pub const E_TH: usize = 0;
pub const E_V: usize = 3;
pub const E_POS: usize = 6;
pub const E_BG: usize = 9;
pub const E_BA: usize = 12;
pub const E_DR: usize = 15;

/// Mechanized navigation solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinsState {
    pub t: f64,
    pub lla: Lla,
    /// Velocity in the ENU frame of `origin` (m/s).
    pub v: Vector3<f64>,
    /// Body to origin-ENU attitude.
    pub q: UnitQuaternion<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
    /// Origin of the local ENU frame the velocity and attitude refer to.
    pub origin: Lla,
}

impl SinsState {
    /// ENU position relative to `origin`.
    pub fn position(&self) -> Vector3<f64> {
        lla_to_local_enu(&self.lla, &self.origin, &Ellipsoid::WGS84)
    }

    /// Map from `δ(L, λ, h)` to the origin-ENU displacement.
    pub fn position_jacobian(&self) -> Matrix3<f64> {
        ecef_to_enu_rotation(&self.origin) * geodetic_jacobian(&self.lla, &Ellipsoid::WGS84)
    }

    pub fn nav_state(&self) -> NavState {
        NavState { t: self.t, p: self.position(), v: self.v, q: self.q, ba: self.ba, bg: self.bg }
    }
}

/// Advances `s` by one held IMU sample of length `dt` with the same Euler
/// step the preintegration uses. Positions move along the geodetic rates of
/// the ENU displacement.
pub fn sins_mechanize(s: &SinsState, sample: &ImuSample, dt: f64) -> Result<SinsState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    let f = sample.accel - s.ba;
    let w = sample.gyro - s.bg;
    let a = s.q * f + gravity_enu();
    let dp = s.v * dt + 0.5 * a * dt * dt;
    let d = s
        .position_jacobian()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("geodetic Jacobian is singular at the pole".into()))?
        * dp;
    Ok(SinsState {
        t: s.t + dt,
        lla: Lla::new(s.lla.lat + d.x, s.lla.lon + d.y, s.lla.alt + d.z)?,
        v: s.v + a * dt,
        q: s.q * small_rotation(&(w * dt)),
        ..*s
    })
}

/// Filter state: nominal solution, slant-range-difference error estimate and
/// error covariance.
#[derive(Clone, Debug)]
pub struct Ekf {
    pub nominal: SinsState,
    pub dr: DVector<f64>,
    pub p: DMatrix<f64>,
    noise: ImuNoiseParams,
    dr_sigma: f64,
    dr_tau: f64,
    buoys: BuoyArray,
    lbl_sigma: f64,
    dvl_frame: DvlFrame,
    /// Normalized innovation squared and its degrees of freedom, per update.
    pub nis: Vec<(f64, usize)>,
}

impl Ekf {
    pub fn dim(&self) -> usize {
        E_DR + self.dr.len()
    }

    /// Starts from the log's initial state and uncertainty.
    pub fn new(header: &LogHeader) -> Self {
        let x = &header.init;
        let origin = header.origin;
        let enu_to_lla = |p: &Vector3<f64>| crate::geo::local_enu_to_lla(p, &origin, &Ellipsoid::WGS84);
        let nominal = SinsState { t: x.t, lla: enu_to_lla(&x.p), v: x.v, q: x.q, bg: x.bg, ba: x.ba, origin };
        let m = header.buoys.len();
        let n = E_DR + m;
        let s = &header.init_sigma;
        let mut p = DMatrix::zeros(n, n);
        let jinv = nominal.position_jacobian().try_inverse().expect("origin is not a pole");
        let pos_cov = jinv * Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2])) * jinv.transpose();
        p.view_mut((E_POS, E_POS), (3, 3)).copy_from(&pos_cov);
        for i in 0..3 {
            p[(E_V + i, E_V + i)] = s[3 + i] * s[3 + i];
            p[(E_TH + i, E_TH + i)] = s[6 + i] * s[6 + i];
            p[(E_BA + i, E_BA + i)] = s[9 + i] * s[9 + i];
            p[(E_BG + i, E_BG + i)] = s[12 + i] * s[12 + i];
        }
        for i in 0..m {
            p[(E_DR + i, E_DR + i)] = header.dr_sigma * header.dr_sigma;
        }
        Self {
            nominal,
            dr: DVector::zeros(m),
            p,
            noise: header.imu_noise,
            dr_sigma: header.dr_sigma,
            dr_tau: header.dr_tau,
            buoys: header.buoys.clone(),
            lbl_sigma: header.lbl_sigma,
            dvl_frame: header.dvl_frame,
            nis: Vec::new(),
        }
    }

    /// Discrete transition `I + F·dt` and process noise for one held sample.
    pub fn transition(&self, sample: &ImuSample, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let s = &self.nominal;
        let r = s.q.to_rotation_matrix().into_inner();
        let f = sample.accel - s.ba;
        let w = sample.gyro - s.bg;
        let mut phi = DMatrix::identity(n, n);
        let mut put = |i: usize, j: usize, m: Matrix3<f64>| {
            let mut v = phi.view_mut((i, j), (3, 3));
            v += m * dt;
        };
        put(E_TH, E_TH, -skew(&w));
        put(E_TH, E_BG, -Matrix3::identity());
        put(E_V, E_TH, -r * skew(&f));
        put(E_V, E_BA, -r);
        put(E_POS, E_V, s.position_jacobian().try_inverse().unwrap_or_else(Matrix3::zeros));
        for i in 0..self.dr.len() {
            phi[(E_DR + i, E_DR + i)] -= dt / self.dr_tau;
        }
        let nz = &self.noise;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..3 {
            q[(E_TH + i, E_TH + i)] = nz.gyro_noise_density.powi(2) * dt;
            q[(E_V + i, E_V + i)] = nz.accel_noise_density.powi(2) * dt;
            q[(E_BG + i, E_BG + i)] = nz.gyro_bias_walk.powi(2) * dt;
            q[(E_BA + i, E_BA + i)] = nz.accel_bias_walk.powi(2) * dt;
        }
        for i in 0..self.dr.len() {
            q[(E_DR + i, E_DR + i)] = 2.0 * self.dr_sigma.powi(2) / self.dr_tau * dt;
        }
        (phi, q)
    }

    /// Mechanizes the nominal state and propagates `P ← ΦPΦᵀ + Q`.
    pub fn predict(&mut self, sample: &ImuSample, dt: f64) -> Result<()> {
        let (phi, q) = self.transition(sample, dt);
        self.nominal = sins_mechanize(&self.nominal, sample, dt)?;
        self.dr *= 1.0 - dt / self.dr_tau;
        self.p = &phi * &self.p * phi.transpose() + q;
        symmetrize(&mut self.p);
        Ok(())
    }

    /// Kalman update with innovation `y`, Jacobian `h` and noise `r`, then
    /// closed-loop correction of the nominal state.
    pub fn update(&mut self, y: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
        let n = self.dim();
        let pht = &self.p * h.transpose();
        let s = h * &pht + r;
        let s_chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("innovation covariance is not positive definite".into()))?;
        self.nis.push((y.dot(&s_chol.solve(y)), y.len()));
        let k = s_chol.solve(&pht.transpose()).transpose();
        let dx = &k * y;
        let ikh = DMatrix::identity(n, n) - &k * h;
        self.p = &ikh * &self.p * ikh.transpose() + &k * r * k.transpose();
        symmetrize(&mut self.p);
        self.inject(&dx)
    }

    fn inject(&mut self, dx: &DVector<f64>) -> Result<()> {
        let b = |o: usize| Vector3::new(dx[o], dx[o + 1], dx[o + 2]);
        let s = &mut self.nominal;
        s.q *= quat_exp(&b(E_TH));
        s.v += b(E_V);
        let d = b(E_POS);
        s.lla = Lla::new(s.lla.lat + d.x, s.lla.lon + d.y, s.lla.alt + d.z)?;
        s.bg += b(E_BG);
        s.ba += b(E_BA);
        for i in 0..self.dr.len() {
            self.dr[i] += dx[E_DR + i];
        }
        Ok(())
    }

    /// Slant-range-difference update: `ρ = ρ(p) − δR`, rows `[0 H₁ 0 −I]`
    /// with `H₁ = E·J`.
    pub fn update_lbl(&mut self, z: &LblMeasurement) -> Result<()> {
        z.validate(&self.buoys)?;
        let p = self.nominal.position();
        let pred = lbl_predicted_rho(&p, &self.buoys)? - &self.dr;
        let h1 = self.lbl_h1()?;
        let m = self.dr.len();
        let mut h = DMatrix::zeros(m, self.dim());
        h.view_mut((0, E_POS), (m, 3)).copy_from(&h1);
        h.view_mut((0, E_DR), (m, m)).copy_from(&(-DMatrix::identity(m, m)));
        let r = DMatrix::identity(m, m) * self.lbl_sigma.powi(2);
        self.update(&(&z.rho - pred), &h, &r)
    }

    /// Position block of the LBL rows: geometry rows composed with the
    /// geodetic Jacobian.
    pub fn lbl_h1(&self) -> Result<DMatrix<f64>> {
        let e = lbl_geometry_rows(&self.nominal.position(), &self.buoys)?;
        let j = self.nominal.position_jacobian();
        Ok(e * DMatrix::from_column_slice(3, 3, j.as_slice()))
    }

    /// Rows, innovation and noise of one auxiliary measurement.
    pub fn aux_model(&self, z: &AuxMeasurement) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let s = &self.nominal;
        let sig2 = z.sigma.component_mul(&z.sigma);
        let d3 = |m: Matrix3<f64>| DMatrix::from_column_slice(3, 3, m.as_slice());
        match z.value {
            AuxValue::Gnss(enu) => {
                let mut h = DMatrix::zeros(3, n);
                h.view_mut((0, E_POS), (3, 3)).copy_from(&d3(s.position_jacobian()));
                let y = enu - s.position();
                (DVector::from_column_slice(y.as_slice()), h, d3(Matrix3::from_diagonal(&sig2)))
            }
            AuxValue::Dvl(v) => {
                let mut h = DMatrix::zeros(3, n);
                let y = match self.dvl_frame {
                    DvlFrame::World => {
                        h.view_mut((0, E_V), (3, 3)).copy_from(&DMatrix::identity(3, 3));
                        v - s.v
                    }
                    DvlFrame::Body => {
                        let rt = s.q.inverse().to_rotation_matrix().into_inner();
                        let vb = rt * s.v;
                        h.view_mut((0, E_V), (3, 3)).copy_from(&d3(rt));
                        h.view_mut((0, E_TH), (3, 3)).copy_from(&d3(skew(&vb)));
                        v - vb
                    }
                };
                (DVector::from_column_slice(y.as_slice()), h, d3(Matrix3::from_diagonal(&sig2)))
            }
            AuxValue::Mcp(yaw) => {
                let mut h = DMatrix::zeros(1, n);
                let g = yaw_gradient(&s.q);
                h.view_mut((0, E_TH), (1, 3)).copy_from(&DMatrix::from_row_slice(1, 3, g.as_slice()));
                (DVector::from_element(1, wrap_angle(yaw - yaw_of(&s.q))), h, DMatrix::from_element(1, 1, sig2.x))
            }
            AuxValue::Ps(u) => {
                let mut h = DMatrix::zeros(1, n);
                let j = s.position_jacobian();
                for c in 0..3 {
                    h[(0, E_POS + c)] = j[(2, c)];
                }
                (DVector::from_element(1, u - s.position().z), h, DMatrix::from_element(1, 1, sig2.x))
            }
        }
    }

    pub fn update_aux(&mut self, z: &AuxMeasurement) -> Result<()> {
        let (y, h, r) = self.aux_model(z);
        self.update(&y, &h, &r)
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// When auxiliary measurements enter the filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTiming {
    /// Held until the next filter epoch and applied there as if taken at that
    /// instant, without time-offset compensation.
    #[default]
    Epoch,
    /// Applied at the measurement instant.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfOptions {
    pub timing: AuxTiming,
    /// Filter epoch spacing when no LBL epoch arrives (s).
    pub epoch_interval: f64,
    pub sensors: SensorSet,
}

impl Default for EkfOptions {
    fn default() -> Self {
        Self { timing: AuxTiming::Epoch, epoch_interval: 1.0, sensors: SensorSet::all() }
    }
}

/// Replays `log` through the filter. Estimates are reported at the same
/// epochs the factor-graph pipeline uses: LBL epochs, or a timer without LBL.
pub fn run_ekf(log: &MeasurementLog, options: &EkfOptions) -> Result<FusionRun> {
    replay(log, options).map(|(run, _)| run)
}

/// As [`run_ekf`], also returning the final filter.
pub fn replay(log: &MeasurementLog, options: &EkfOptions) -> Result<(FusionRun, Ekf)> {
    let start = std::time::Instant::now();
    let mut ekf = Ekf::new(&log.header);
    let mut held: Option<ImuSample> = None;
    let mut epoch = log.header.init.t;
    let mut reported = false;
    let mut queue: Vec<AuxMeasurement> = Vec::new();
    let mut estimates = Vec::new();

    let advance = |ekf: &mut Ekf, held: &Option<ImuSample>, t: f64| -> Result<()> {
        let dt = t - ekf.nominal.t;
        if dt > 1e-12 {
            match held {
                Some(s) => ekf.predict(s, dt)?,
                None => ekf.nominal.t = t,
            }
        }
        ekf.nominal.t = t;
        Ok(())
    };
    let close_epoch = |ekf: &mut Ekf, queue: &mut Vec<AuxMeasurement>, estimates: &mut Vec<NavState>| -> Result<()> {
        for z in queue.drain(..) {
            ekf.update_aux(&z)?;
        }
        estimates.push(ekf.nominal.nav_state());
        Ok(())
    };

    for rec in &log.records {
        let t = rec.t();
        if t < ekf.nominal.t - 1e-9 {
            return Err(Error::NonMonotonicTime { t, last: ekf.nominal.t });
        }
        if !reported && t > epoch + 1e-9 {
            close_epoch(&mut ekf, &mut queue, &mut estimates)?;
            reported = true;
        }
        while t > epoch + options.epoch_interval + 1e-6 {
            epoch += options.epoch_interval;
            advance(&mut ekf, &held, epoch)?;
            close_epoch(&mut ekf, &mut queue, &mut estimates)?;
        }
        advance(&mut ekf, &held, t)?;
        match rec {
            Record::Imu(s) => held = Some(*s),
            _ => match log.aiding(rec) {
                Some(Aiding::Lbl(z)) if options.sensors.lbl => {
                    if t > epoch + 1e-9 {
                        epoch = t;
                        reported = false;
                    }
                    ekf.update_lbl(&z)?;
                }
                Some(Aiding::Aux(z)) if options.sensors.uses(z.value.kind()) => match options.timing {
                    AuxTiming::Exact => ekf.update_aux(&z)?,
                    AuxTiming::Epoch if t <= epoch + 1e-9 => ekf.update_aux(&z)?,
                    AuxTiming::Epoch => queue.push(z),
                },
                _ => {}
            },
        }
    }
    if !reported {
        close_epoch(&mut ekf, &mut queue, &mut estimates)?;
    }
    Ok((FusionRun { estimates, stats: Vec::new(), wall_time: start.elapsed().as_secs_f64() }, ekf))
}
