//! Linear-Gaussian toy chain for marginalization checks.

use ilns::factors::{linear_factor, FactorRecord};
use ilns::graph::{SlidingWindowGraph, SolverSettings, WindowSize};
use ilns::state::NavState;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn origin(t: f64) -> NavState {
    NavState::new(t, Vector3::zeros(), Vector3::zeros(), UnitQuaternion::identity())
}

pub fn selector(rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), 15);
    for (i, r) in rows.enumerate() {
        a[(i, r)] = 1.0;
    }
    a
}

/// Linear chain: prior on x0, relative factors between neighbours, and noisy
/// absolute position fixes. Attitude offsets are zero so every state stays at
/// identity attitude, where the coordinates are exactly linear.
pub struct Chain {
    pub prior: FactorRecord,
    pub relative: Vec<FactorRecord>,
    pub absolute: Vec<FactorRecord>,
}

pub fn chain(len: usize, seed: u64) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sel = |sign: f64| DMatrix::identity(15, 15) * sign;
    let diag = |rng: &mut ChaCha8Rng, n: usize| DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0)));
    let prior = linear_factor(vec![0], vec![DMatrix::identity(15, 15)], DVector::zeros(15), DMatrix::identity(15, 15)).unwrap();
    let relative = (1..len)
        .map(|k| {
            let b = DVector::from_fn(15, |i, _| if (6..9).contains(&i) { 0.0 } else { rng.random_range(-1.0..1.0) });
            let cov = diag(&mut rng, 15);
            linear_factor(vec![k - 1, k], vec![sel(-1.0), sel(1.0)], b, cov).unwrap()
        })
        .collect();
    let absolute = (0..len)
        .map(|k| {
            let b = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let cov = diag(&mut rng, 3);
            linear_factor(vec![k], vec![selector(0..3)], b, cov).unwrap()
        })
        .collect();
    Chain { prior, relative, absolute }
}

/// Final state of `c` solved with `window`, either one keyframe at a time
/// or in a single batch at the end.
pub fn run(c: &Chain, window: WindowSize, solve_each: bool) -> NavState {
    let mut g = SlidingWindowGraph::new(window, SolverSettings::default());
    let n = c.absolute.len();
    for k in 0..n {
        g.add_state(origin(k as f64)).unwrap();
        if k == 0 {
            g.add_factor(c.prior.clone()).unwrap();
        } else {
            g.add_factor(c.relative[k - 1].clone()).unwrap();
        }
        g.add_factor(c.absolute[k].clone()).unwrap();
        if solve_each {
            g.solve().unwrap();
            g.slide().unwrap();
            assert!(g.len() <= match window {
                WindowSize::Sliding(w) => w + 1,
                WindowSize::Global => usize::MAX,
            });
        }
    }
    if !solve_each {
        g.solve().unwrap();
    }
    g.newest().unwrap().clone()
}
