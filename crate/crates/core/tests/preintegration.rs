mod common;

use common::{euler_error, propagate_backward, propagate_forward, random_bias, random_buffer, random_state, random_vec, state_gap};
use ilns::factors::{predict, predict_at, FbpfRoute};
use ilns::geo::gravity_enu;
use ilns::imu::{Bias, Direction, ImuNoiseParams, ImuSample, PreintegratedImu, RepropagationThreshold, Scheme};
use nalgebra::{SymmetricEigen, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const UNBOUNDED: RepropagationThreshold = RepropagationThreshold { accel: f64::INFINITY, gyro: f64::INFINITY };

fn span(buf: &common::Buffer, bias: Bias, dir: Direction) -> PreintegratedImu {
    PreintegratedImu::over_span(&buf.samples, buf.t0, buf.t1, bias, dir, ImuNoiseParams::default(), Scheme::Euler).unwrap()
}

fn backward_route(pre: &PreintegratedImu) -> FbpfRoute {
    FbpfRoute { direction: Direction::Backward, offset: pre.span() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_state_propagation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = random_buffer(&mut rng, 200);
        let x0 = random_state(&mut rng, buf.t0);
        let pre = span(&buf, Bias::new(x0.ba, x0.bg), Direction::Forward);
        let g = gravity_enu();
        let gap = state_gap(&predict(&x0, &pre, &g), &propagate_forward(&x0, &buf, &g));
        prop_assert!(gap <= 1e-12, "gap {gap:e}");
    }

    #[test]
    fn backward_matches_reversed_propagation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = random_buffer(&mut rng, 200);
        let x1 = random_state(&mut rng, buf.t1);
        let pre = span(&buf, Bias::new(x1.ba, x1.bg), Direction::Backward);
        let g = gravity_enu();
        let pr = predict_at(&x1, &pre, &backward_route(&pre), &g).unwrap();
        let oracle = propagate_backward(&x1, &buf, &g);
        let gap = (pr.p - oracle.p).amax().max((pr.v - oracle.v).amax()).max(2.0 * (pr.q.inverse() * oracle.q).imag().norm());
        prop_assert!(gap <= 1e-12, "gap {gap:e}");
    }

    #[test]
    fn backward_undoes_forward(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = random_buffer(&mut rng, 200);
        let x0 = random_state(&mut rng, buf.t0);
        let bias = Bias::new(x0.ba, x0.bg);
        let g = gravity_enu();
        let x1 = predict(&x0, &span(&buf, bias, Direction::Forward), &g);
        let back = span(&buf, bias, Direction::Backward);
        let pr = predict_at(&x1, &back, &backward_route(&back), &g).unwrap();
        prop_assert!((pr.p - x0.p).amax() < 1e-10);
        prop_assert!((pr.v - x0.v).amax() < 1e-11);
        prop_assert!((pr.q.inverse() * x0.q).imag().norm() < 1e-12);
    }

    #[test]
    fn covariance_is_symmetric_psd(seed in any::<u64>(), backward in any::<bool>(), midpoint in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = random_buffer(&mut rng, 300);
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let scheme = if midpoint { Scheme::Midpoint } else { Scheme::Euler };
        let pre = PreintegratedImu::over_span(&buf.samples, buf.t0, buf.t1, random_bias(&mut rng), dir, ImuNoiseParams::default(), scheme).unwrap();
        let c = pre.covariance;
        prop_assert_eq!(c, c.transpose());
        let eig = SymmetricEigen::new(c).eigenvalues;
        let scale = eig.amax();
        prop_assert!(eig.min() >= -1e-12 * scale, "min eigenvalue {:e} of {:e}", eig.min(), scale);
    }

    #[test]
    fn accel_bias_correction_is_exact(seed in any::<u64>(), backward in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = random_buffer(&mut rng, 200);
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let b0 = random_bias(&mut rng);
        let b1 = Bias::new(b0.accel + random_vec(&mut rng, 0.1), b0.gyro);
        let pre = span(&buf, b0, dir);
        let c = pre.bias_corrected_delta(&b1, &UNBOUNDED).unwrap();
        let exact = pre.repropagate(&buf.samples, b1).unwrap();
        prop_assert!((c.alpha - exact.alpha).amax() < 1e-12);
        prop_assert!((c.beta - exact.beta).amax() < 1e-12);
    }

    #[test]
    fn gyro_bias_correction_converges_quadratically(seed in any::<u64>(), backward in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = random_buffer(&mut rng, 2);
        while buf.t1 - buf.t0 < 1.0 {
            buf.samples.push(ImuSample { t: buf.t1, gyro: random_vec(&mut rng, 1.5), accel: random_vec(&mut rng, 12.0) });
            buf.t1 += 0.005;
        }
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let b0 = random_bias(&mut rng);
        let pre = span(&buf, b0, dir);
        let d = random_vec(&mut rng, 1.0).normalize() * 0.02;
        let err = |h: f64| {
            let b = Bias::new(b0.accel, b0.gyro + d * h);
            let c = pre.bias_corrected_delta(&b, &UNBOUNDED).unwrap();
            let exact = pre.repropagate(&buf.samples, b).unwrap();
            (c.alpha - exact.alpha).norm() + (c.beta - exact.beta).norm() + 2.0 * (c.gamma.inverse() * exact.gamma).imag().norm()
        };
        let ratio = err(1.0) / err(0.5);
        prop_assert!((3.4..4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn stationary_platform_stays_put(seed in any::<u64>(), backward in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = UnitQuaternion::from_scaled_axis(random_vec(&mut rng, 1.0));
        let g = gravity_enu();
        let mut buf = random_buffer(&mut rng, 500);
        for s in &mut buf.samples {
            s.gyro = Vector3::zeros();
            s.accel = q.inverse() * -g;
        }
        let x = ilns::state::NavState::new(buf.t0, random_vec(&mut rng, 100.0), Vector3::zeros(), q);
        let (y, z) = if backward {
            let pre = span(&buf, Bias::default(), Direction::Backward);
            let pr = predict_at(&x, &pre, &backward_route(&pre), &g).unwrap();
            (pr.p, pr.v)
        } else {
            let y = predict(&x, &span(&buf, Bias::default(), Direction::Forward), &g);
            (y.p, y.v)
        };
        prop_assert!((y - x.p).amax() < 1e-12);
        prop_assert!(z.amax() < 1e-12);
    }
}

#[test]
fn euler_error_halves_with_step() {
    for dt in [0.02, 0.01, 0.005] {
        let ratio = euler_error(dt) / euler_error(dt / 2.0);
        assert!((ratio - 2.0).abs() <= 0.2, "dt {dt}: ratio {ratio}");
    }
}

#[test]
fn euler_converges_to_closed_form() {
    assert!(euler_error(1e-4) < 1e-3);
}
