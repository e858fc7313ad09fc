//! Finite-difference checks of factor Jacobians.

use std::sync::Arc;

use ilns::factors::{
    aux_factor, block_diagonal_covariance, imu_factor, lbl_factor, prior_factor, AuxMeasurement,
    AuxValue, BuoyArray, FactorRecord, FbpfRoute, ImuDelta, LblMeasurement,
};
use ilns::geo::{gravity_enu, quat_exp};
use ilns::imu::{Bias, Direction, ImuNoiseParams, ImuSample, PreintegratedImu, Scheme};
use ilns::state::{NavState, Tangent, STATE_DIM};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

pub fn random_state(rng: &mut ChaCha8Rng, t: f64) -> NavState {
    NavState {
        t,
        p: v3(rng, 50.0) + Vector3::new(0.0, 0.0, -100.0),
        v: v3(rng, 1.0),
        q: quat_exp(&v3(rng, 1.5)),
        ba: v3(rng, 0.01),
        bg: v3(rng, 0.002),
    }
}

pub fn random_delta(rng: &mut ChaCha8Rng, t0: f64, t1: f64, dir: Direction, scheme: Scheme) -> ImuDelta {
    let n = ((t1 - t0) * 200.0).round() as usize + 1;
    let samples: Vec<ImuSample> = (0..n)
        .map(|i| ImuSample {
            t: t0 + i as f64 / 200.0,
            gyro: v3(rng, 0.3),
            accel: Vector3::new(0.0, 0.0, 9.8) + v3(rng, 1.0),
        })
        .collect();
    let bias = Bias::new(v3(rng, 0.01), v3(rng, 0.002));
    let pre = PreintegratedImu::over_span(&samples, t0, t1, bias, dir, ImuNoiseParams::default(), scheme)
        .unwrap();
    ImuDelta::new(pre, Arc::from(samples))
}

/// Largest relative deviation between analytic and central-difference Jacobians.
pub fn worst_jacobian_error(f: &FactorRecord, states: &[NavState]) -> f64 {
    let refs: Vec<&NavState> = states.iter().collect();
    let lin = f.linearize(&refs).unwrap();
    let scale = lin.jacobians.iter().map(|j| j.amax()).fold(1e-3, f64::max);
    let mut worst: f64 = 0.0;
    for (k, j) in lin.jacobians.iter().enumerate() {
        for c in 0..STATE_DIM {
            let h = 1e-6;
            let mut d = Tangent::zeros();
            d[c] = h;
            let eval = |d: &Tangent| -> DVector<f64> {
                let mut xs = states.to_vec();
                xs[k] = xs[k].retract(d);
                let r: Vec<&NavState> = xs.iter().collect();
                f.residual(&r).unwrap()
            };
            let fd = (eval(&d) - eval(&-d)) / (2.0 * h);
            let err = (j.column(c) - fd).amax() / scale;
            worst = worst.max(err);
        }
    }
    worst
}

/// Relative tolerance on analytic against finite-difference Jacobians.
pub const TOL: f64 = 1e-5;

/// Worst error of the IMU factor per scheme over 20 random points.
pub fn imu_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    [Scheme::Euler, Scheme::Midpoint]
        .into_iter()
        .map(|scheme| {
            let worst = (0..20)
                .map(|_| {
                    let delta = random_delta(&mut rng, 10.0, 11.0, Direction::Forward, scheme);
                    let f = imu_factor(0, 1, delta, gravity_enu()).unwrap();
                    let states = [random_state(&mut rng, 10.0), random_state(&mut rng, 11.0)];
                    worst_jacobian_error(&f, &states)
                })
                .fold(0.0, f64::max);
            (format!("imu {scheme:?}"), worst)
        })
        .collect()
}

/// Worst error of each auxiliary factor per route over 20 random points.
pub fn aux_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sigma = Vector3::new(0.02, 0.02, 0.01);
    let values = [
        AuxValue::Gnss(Vector3::new(3.0, -4.0, -90.0)),
        AuxValue::Dvl(Vector3::new(0.5, 0.1, -0.2)),
        AuxValue::Mcp(0.7),
        AuxValue::Ps(-95.0),
    ];
    let mut out = Vec::new();
    for value in values {
        for dir in [Direction::Forward, Direction::Backward] {
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let offset = rng.random_range(1..=100) as f64 / 200.0;
                let (t0, t1) = match dir {
                    Direction::Forward => (10.0, 10.0 + offset),
                    Direction::Backward => (11.0 - offset, 11.0),
                };
                let delta = random_delta(&mut rng, t0, t1, dir, Scheme::Euler);
                let route = FbpfRoute { direction: dir, offset: t1 - t0 };
                let z = AuxMeasurement { t: 0.0, value, sigma };
                let f = aux_factor(0, &z, route, delta, gravity_enu()).unwrap();
                let anchor = random_state(&mut rng, 10.0);
                worst = worst.max(worst_jacobian_error(&f, &[anchor]));
            }
            out.push((format!("{:?} {dir:?}", value.kind()), worst));
        }
    }
    out
}

/// Worst error of the LBL and prior factors over 20 random points.
pub fn lbl_prior_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let buoys = Arc::new(BuoyArray::table_one());
    let (mut lbl, mut prior): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let x = random_state(&mut rng, 0.0);
        let z = LblMeasurement { t: 0.0, rho: DVector::from_vec(vec![1.0, -2.0, 3.0]), sigma: 0.3 };
        let f = lbl_factor(0, &z, buoys.clone(), 0.0).unwrap();
        lbl = lbl.max(worst_jacobian_error(&f, &[x.clone()]));
        let mean = random_state(&mut rng, 0.0);
        let p = prior_factor(0, mean, block_diagonal_covariance([1.0, 0.1, 0.01, 0.01, 0.001])).unwrap();
        prior = prior.max(worst_jacobian_error(&p, &[x]));
    }
    vec![("lbl".into(), lbl), ("prior".into(), prior)]
}
