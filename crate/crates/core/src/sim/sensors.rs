//! Sensor synthesis on top of a truth trajectory.
//!
//! Every sensor draws from its own ChaCha8 stream of the scenario seed, so
//! enabling or reconfiguring one sensor never changes another's noise.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::trajectory::{build_trajectory, Trajectory};
use crate::config::{Config, DvlFrame};
use crate::error::Result;
use crate::factors::{lbl_predicted_rho, BuoyArray};
use crate::geo::{local_enu_to_lla, quat_exp, yaw_of, wrap_angle, Ellipsoid, Lla};
use crate::imu::{ImuNoiseParams, ImuSample};
use crate::io::{quantize_time, LogHeader, MeasurementLog, Record};
use crate::state::NavState;

/// Substream identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Imu = 1,
    Lbl = 2,
    Gnss = 3,
    Dvl = 4,
    Mcp = 5,
    Ps = 6,
    Init = 7,
}

fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

fn normal3(r: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal))
}

/// Which IMU error terms to synthesize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImuErrors {
    pub constant_bias: bool,
    pub bias_walk: bool,
    pub white_noise: bool,
}

impl ImuErrors {
    pub const ALL: Self = Self { constant_bias: true, bias_walk: true, white_noise: true };
    pub const NONE: Self = Self { constant_bias: false, bias_walk: false, white_noise: false };
}

/// IMU samples at the truth rate. Constant biases take the configured
/// magnitude on every axis with a random sign; walks and white noise are
/// Gaussian, the latter scaled by √rate.
pub fn synthesize_imu(truth: &Trajectory, noise: &ImuNoiseParams, errors: ImuErrors, seed: u64) -> Vec<ImuSample> {
    let mut r = rng(seed, Stream::Imu);
    let dt = 1.0 / truth.rate;
    let sign = |r: &mut ChaCha8Rng| Vector3::from_fn(|_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
    let (mut ba, mut bg) = (Vector3::zeros(), Vector3::zeros());
    if errors.constant_bias {
        ba = sign(&mut r) * noise.accel_bias;
        bg = sign(&mut r) * noise.gyro_bias;
    }
    let white_a = noise.accel_noise_density * truth.rate.sqrt();
    let white_g = noise.gyro_noise_density * truth.rate.sqrt();
    let walk_a = noise.accel_bias_walk * dt.sqrt();
    let walk_g = noise.gyro_bias_walk * dt.sqrt();
    truth
        .samples
        .iter()
        .map(|s| {
            let mut accel = s.specific_force + ba;
            let mut gyro = s.rate + bg;
            if errors.white_noise {
                accel += normal3(&mut r) * white_a;
                gyro += normal3(&mut r) * white_g;
            }
            if errors.bias_walk {
                ba += normal3(&mut r) * walk_a;
                bg += normal3(&mut r) * walk_g;
            }
            ImuSample { t: s.t, gyro, accel }
        })
        .collect()
}

/// Epoch times `offset + k/rate` inside `[0, duration)` that avoid every
/// half-open dropout `[start, end)`.
pub fn epochs(duration: f64, rate: f64, offset: f64, dropouts: &[[f64; 2]]) -> Vec<f64> {
    (0..)
        .map(|k| quantize_time(offset + k as f64 / rate))
        .take_while(|t| *t < duration - 1e-9)
        .filter(|t| !dropouts.iter().any(|d| d[0] <= *t && *t < d[1]))
        .collect()
}

/// Slant-range differences at `times`. Each range, the reference included,
/// carries independent Gaussian noise of σ `sigma`.
pub fn synthesize_lbl(truth: &Trajectory, buoys: &BuoyArray, times: &[f64], sigma: f64, seed: u64) -> Result<Vec<Record>> {
    let mut r = rng(seed, Stream::Lbl);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let Some((p, _, _)) = truth.at(t) else { continue };
        let mut rho = lbl_predicted_rho(&p, buoys)?;
        if sigma > 0.0 {
            let n0: f64 = r.sample(StandardNormal);
            for v in rho.iter_mut() {
                let ni: f64 = r.sample(StandardNormal);
                *v += sigma * (ni - n0);
            }
        }
        out.push(Record::Lbl { t, rho: rho.iter().copied().collect() });
    }
    Ok(out)
}

/// One auxiliary sensor channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AuxChannel {
    /// σ horizontal and vertical (m), reported as a geodetic fix.
    Gnss { sigma_h: f64, sigma_v: f64, origin: Lla },
    Dvl { sigma: f64, frame: DvlFrame },
    /// σ (rad).
    Mcp { sigma: f64 },
    Ps { sigma: f64 },
}

pub fn synthesize_aux(truth: &Trajectory, channel: AuxChannel, times: &[f64], seed: u64) -> Vec<Record> {
    let stream = match channel {
        AuxChannel::Gnss { .. } => Stream::Gnss,
        AuxChannel::Dvl { .. } => Stream::Dvl,
        AuxChannel::Mcp { .. } => Stream::Mcp,
        AuxChannel::Ps { .. } => Stream::Ps,
    };
    let mut r = rng(seed, stream);
    let mut n = |s: f64| if s > 0.0 { s * r.sample::<f64, _>(StandardNormal) } else { 0.0 };
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let Some((p, v, q)) = truth.at(t) else { continue };
        out.push(match channel {
            AuxChannel::Gnss { sigma_h, sigma_v, origin } => {
                let e = Vector3::new(n(sigma_h), n(sigma_h), n(sigma_v));
                Record::Gnss { t, fix: local_enu_to_lla(&(p + e), &origin, &Ellipsoid::WGS84) }
            }
            AuxChannel::Dvl { sigma, frame } => {
                let v = match frame {
                    DvlFrame::World => v,
                    DvlFrame::Body => q.inverse() * v,
                };
                Record::Dvl { t, v: v + Vector3::new(n(sigma), n(sigma), n(sigma)) }
            }
            AuxChannel::Mcp { sigma } => Record::Mcp { t, yaw: wrap_angle(yaw_of(&q) + n(sigma)) },
            AuxChannel::Ps { sigma } => Record::Ps { t, u: p.z + n(sigma) },
        });
    }
    out
}

/// Every output of one simulation run.
#[derive(Clone, Debug)]
pub struct SensorStreams {
    pub log: MeasurementLog,
    pub truth: Trajectory,
}

/// Runs the full scenario of `config` with `seed`.
pub fn simulate(config: &Config, seed: u64) -> Result<SensorStreams> {
    config.validate()?;
    let quiet = config.trajectory.noise_free;
    let truth = build_trajectory(&config.script(), config.imu.rate_hz)?;
    let noise = config.imu.noise();
    let buoys = config.buoys()?;
    let origin = config.origin()?;
    let duration = config.trajectory.duration_s;
    let pick = |s: f64| if quiet { 0.0 } else { s };

    let mut records: Vec<Record> = synthesize_imu(&truth, &noise, if quiet { ImuErrors::NONE } else { ImuErrors::ALL }, seed)
        .into_iter()
        .map(|mut s| {
            s.t = quantize_time(s.t);
            Record::Imu(s)
        })
        .collect();

    let c = config;
    if c.lbl.enabled {
        let times = epochs(duration, c.lbl.rate_hz, c.lbl.offset_s, &c.lbl.dropouts);
        records.extend(synthesize_lbl(&truth, &buoys, &times, pick(c.lbl.ranging_sigma_m), seed)?);
    }
    let channels = [
        (
            c.gnss.enabled,
            (c.gnss.rate_hz, c.gnss.offset_s, &c.gnss.dropouts),
            AuxChannel::Gnss { sigma_h: pick(c.gnss.sigma_horizontal_m), sigma_v: pick(c.gnss.sigma_vertical_m), origin },
        ),
        (
            c.dvl.enabled,
            (c.dvl.rate_hz, c.dvl.offset_s, &c.dvl.dropouts),
            AuxChannel::Dvl { sigma: pick(c.dvl.sigma_m_s), frame: c.dvl.frame },
        ),
        (
            c.mcp.enabled,
            (c.mcp.rate_hz, c.mcp.offset_s, &c.mcp.dropouts),
            AuxChannel::Mcp { sigma: pick(c.mcp.sigma_deg.to_radians()) },
        ),
        (c.ps.enabled, (c.ps.rate_hz, c.ps.offset_s, &c.ps.dropouts), AuxChannel::Ps { sigma: pick(c.ps.sigma_m) }),
    ];
    for (enabled, (rate, offset, drops), channel) in channels {
        if enabled {
            let times = epochs(duration, rate, offset, drops);
            records.extend(synthesize_aux(&truth, channel, &times, seed));
        }
    }
    // Stable: IMU first at equal times, then sensors in the order above.
    records.sort_by(|a, b| a.t().total_cmp(&b.t()));

    let t = &c.trajectory;
    let s0 = &truth.samples[0];
    let mut init = NavState::new(0.0, s0.p, s0.v, s0.q);
    if !quiet {
        let mut r = rng(seed, Stream::Init);
        init.p += normal3(&mut r) * t.init_position_sigma_m;
        init.v += normal3(&mut r) * t.init_velocity_sigma_m_s;
        let e = normal3(&mut r);
        let rp = t.init_roll_pitch_sigma_deg.to_radians();
        init.q *= quat_exp(&Vector3::new(e.x * rp, e.y * rp, e.z * t.init_yaw_sigma_deg.to_radians()));
    }
    let rp = t.init_roll_pitch_sigma_deg.to_radians();
    let yaw = t.init_yaw_sigma_deg.to_radians();
    let (pa, pv) = (t.init_position_sigma_m, t.init_velocity_sigma_m_s);
    let (ab, gb) = (noise.accel_bias.max(1e-9), noise.gyro_bias.max(1e-12));
    let init_sigma = [pa, pa, pa, pv, pv, pv, rp, rp, yaw, ab, ab, ab, gb, gb, gb];

    let header = LogHeader {
        origin,
        buoys,
        imu_rate: c.imu.rate_hz,
        scheme: c.imu.scheme,
        imu_noise: noise,
        lbl_sigma: c.lbl.ranging_sigma_m,
        lbl_extra_sigma: c.lbl.extra_sigma_m,
        dr_sigma: c.lbl.dr_sigma_m,
        dr_tau: c.lbl.dr_tau_s,
        gnss_sigma: [c.gnss.sigma_horizontal_m, c.gnss.sigma_vertical_m],
        dvl_sigma: c.dvl.sigma_m_s,
        dvl_frame: c.dvl.frame,
        mcp_sigma: c.mcp.sigma_deg.to_radians(),
        ps_sigma: c.ps.sigma_m,
        init,
        init_sigma,
    };
    Ok(SensorStreams { log: MeasurementLog { header, records }, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::factors::fbpf_route;
    use crate::imu::Direction;
    use crate::sim::{MotionScript, Segment};
    use approx::assert_relative_eq;

    fn straight(duration: f64, heave: bool) -> Trajectory {
        let mut segments = vec![Segment::Cruise { duration: 1.0 }];
        if heave {
            segments.push(Segment::Heave { duration: 1.0, target_rate: -0.5 });
        }
        let script = MotionScript {
            initial_position: Vector3::zeros(),
            initial_heading: 0.3,
            initial_speed: 0.6,
            segments,
            duration,
        };
        build_trajectory(&script, 200.0).unwrap()
    }

    #[test]
    fn stationary_noise_free_imu_reads_gravity() {
        let script = MotionScript {
            initial_position: Vector3::zeros(),
            initial_heading: 1.0,
            initial_speed: 0.0,
            segments: vec![Segment::Static { duration: 2.0 }],
            duration: 2.0,
        };
        let truth = build_trajectory(&script, 200.0).unwrap();
        let a = synthesize_imu(&truth, &ImuNoiseParams::default(), ImuErrors::NONE, 1);
        let b = synthesize_imu(&truth, &ImuNoiseParams::default(), ImuErrors::NONE, 99);
        assert_eq!(a, b);
        for s in &a {
            assert!((s.accel.norm() - 9.80665).abs() < 1e-12);
            assert_eq!(s.gyro, Vector3::zeros());
        }
    }

    #[test]
    fn white_noise_matches_density() {
        let truth = straight(500.0, false);
        let mut noise = ImuNoiseParams::default();
        let errs = ImuErrors { constant_bias: false, bias_walk: false, white_noise: true };
        noise.accel_noise_density = 1e-3;
        let samples = synthesize_imu(&truth, &noise, errs, 5);
        assert!(samples.len() >= 100_000);
        let expect_a = noise.accel_noise_density * 200f64.sqrt();
        let expect_g = noise.gyro_noise_density * 200f64.sqrt();
        for axis in 0..3 {
            let sd = |f: &dyn Fn(&ImuSample, usize) -> f64| {
                let n = samples.len() as f64;
                let xs: Vec<f64> = samples.iter().zip(&truth.samples).map(|(s, _)| f(s, axis)).collect();
                let m = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            let sa = sd(&|s, i| s.accel[i] - truth.samples[0].specific_force[i]);
            let sg = sd(&|s, i| s.gyro[i]);
            assert!((sa / expect_a - 1.0).abs() < 0.05, "accel σ {sa} vs {expect_a}");
            assert!((sg / expect_g - 1.0).abs() < 0.05, "gyro σ {sg} vs {expect_g}");
        }
    }

    #[test]
    fn lbl_zero_noise_and_counts() {
        let mut c = Config::default();
        c.trajectory.noise_free = true;
        c.lbl.dropouts = vec![[1683.0, 1783.0]];
        let times = epochs(2217.0, 1.0, 0.0, &[]);
        assert_eq!(times.len(), 2217);
        let dropped = epochs(2217.0, 1.0, 0.0, &c.lbl.dropouts);
        assert_eq!(dropped.len(), 2117);
        assert!(dropped.iter().all(|t| !(1683.0..1783.0).contains(t)));

        let truth = straight(3.0, false);
        let buoys = BuoyArray::table_one();
        let recs = synthesize_lbl(&truth, &buoys, &[0.0, 1.0, 2.0], 0.0, 3).unwrap();
        for r in recs {
            let Record::Lbl { t, rho } = r else { panic!() };
            let (p, _, _) = truth.at(t).unwrap();
            let expect = lbl_predicted_rho(&p, &buoys).unwrap();
            assert_eq!(rho, expect.iter().copied().collect::<Vec<_>>());
        }
    }

    #[test]
    fn aux_zero_noise_follows_truth() {
        let truth = straight(20.0, true);
        let ps = synthesize_aux(&truth, AuxChannel::Ps { sigma: 0.0 }, &epochs(20.0, 1.0, 0.7, &[]), 0);
        for r in &ps {
            let Record::Ps { t, u } = r else { panic!() };
            assert_eq!(*u, truth.at(*t).unwrap().0.z);
        }
        let mcp = synthesize_aux(&truth, AuxChannel::Mcp { sigma: 0.0 }, &epochs(20.0, 1.0, 0.5, &[]), 0);
        for r in &mcp {
            let Record::Mcp { yaw, .. } = r else { panic!() };
            assert_relative_eq!(*yaw, 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn late_offset_routes_backward() {
        let lbl = epochs(100.0, 1.0, 0.0, &[]);
        for t in epochs(99.0, 1.0, 0.7, &[]) {
            let k = lbl.partition_point(|x| *x <= t) - 1;
            let route = fbpf_route(t, lbl[k], lbl[k + 1]).unwrap();
            assert_eq!(route.direction, Direction::Backward);
        }
    }

    #[test]
    fn noise_free_imu_reintegrates_truth() {
        use crate::imu::{Bias, PreintegratedImu, Scheme};
        let mut c = Config::default();
        c.trajectory.noise_free = true;
        c.trajectory.duration_s = 120.0;
        let out = simulate(&c, 3).unwrap();
        let imu: Vec<ImuSample> = out.log.imu().copied().collect();
        let pre = PreintegratedImu::over_span(
            &imu,
            10.0,
            110.0,
            Bias::default(),
            Direction::Forward,
            ImuNoiseParams::zero(),
            Scheme::Euler,
        )
        .unwrap();
        let (p0, v0, q0) = out.truth.at(10.0).unwrap();
        let x0 = NavState::new(10.0, p0, v0, q0);
        let x1 = crate::factors::predict(&x0, &pre, &crate::geo::gravity_enu());
        let (p1, _, _) = out.truth.at(110.0).unwrap();
        assert!((x1.p - p1).norm() < 0.1);
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let mut c = Config::default();
        c.trajectory.scenario = Scenario::Stable;
        c.trajectory.duration_s = 60.0;
        let a = simulate(&c, 11).unwrap().log;
        let b = simulate(&c, 11).unwrap().log;
        assert_eq!(a, b);
        let d = simulate(&c, 12).unwrap().log;
        assert_ne!(a, d);
    }
}
