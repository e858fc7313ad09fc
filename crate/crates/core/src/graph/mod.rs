//! Sliding-window MAP estimator over keyframe states.

mod banded;

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{imu_factor, marginal_factor, predict, FactorRecord, ImuDelta, Linearization, MarginalPrior};
use crate::imu::RepropagationThreshold;
use crate::par::{self, Execution};
use crate::state::{NavState, Tangent, STATE_DIM};

pub use banded::{BandedMatrix, Block};

/// Number of preintegration intervals kept in the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowSize {
    Sliding(usize),
    /// Never marginalize.
    Global,
}

impl std::str::FromStr for WindowSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("global") {
            return Ok(WindowSize::Global);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(WindowSize::Sliding(n)),
            _ => Err(Error::InvalidInput(format!("window must be a positive integer or 'global', got '{s}'"))),
        }
    }
}

impl std::fmt::Display for WindowSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowSize::Sliding(n) => write!(f, "{n}"),
            WindowSize::Global => write!(f, "global"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Gauss-Newton, falling back to damped steps when the cost rises.
    #[default]
    GaussNewton,
    LevenbergMarquardt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub method: Method,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_lambda: f64,
    pub execution: Execution,
    pub repropagation: RepropagationThreshold,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: Method::GaussNewton,
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            relative_cost_tolerance: 1e-10,
            step_tolerance: 1e-10,
            initial_lambda: 1e-4,
            execution: Execution::default(),
            repropagation: RepropagationThreshold::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct SlidingWindowGraph {
    window: WindowSize,
    settings: SolverSettings,
    first_key: usize,
    states: VecDeque<NavState>,
    factors: Vec<FactorRecord>,
}

impl SlidingWindowGraph {
    pub fn new(window: WindowSize, settings: SolverSettings) -> Self {
        Self { window, settings, first_key: 0, states: VecDeque::new(), factors: Vec::new() }
    }

    pub fn window(&self) -> WindowSize {
        self.window
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn keys(&self) -> std::ops::Range<usize> {
        self.first_key..self.first_key + self.states.len()
    }

    pub fn oldest_key(&self) -> Option<usize> {
        (!self.states.is_empty()).then_some(self.first_key)
    }

    pub fn newest_key(&self) -> Option<usize> {
        self.states.len().checked_sub(1).map(|i| self.first_key + i)
    }

    pub fn state(&self, key: usize) -> Option<&NavState> {
        key.checked_sub(self.first_key).and_then(|i| self.states.get(i))
    }

    pub fn newest(&self) -> Option<&NavState> {
        self.states.back()
    }

    pub fn states(&self) -> impl Iterator<Item = (usize, &NavState)> {
        self.states.iter().enumerate().map(move |(i, s)| (self.first_key + i, s))
    }

    pub fn factors(&self) -> &[FactorRecord] {
        &self.factors
    }

    /// Appends a state with no connecting factor.
    pub fn add_state(&mut self, x: NavState) -> Result<usize> {
        if let Some(last) = self.states.back() {
            if !(x.t > last.t) {
                return Err(Error::NonMonotonicTime { t: x.t, last: last.t });
            }
        }
        self.states.push_back(x);
        Ok(self.first_key + self.states.len() - 1)
    }

    /// Appends a state initialized at `predicted` and the inertial factor from
    /// the previous newest state.
    pub fn add_keyframe(&mut self, delta: ImuDelta, predicted: NavState, gravity: Vector3<f64>) -> Result<usize> {
        let prev = self.newest_key().ok_or(Error::EmptyInput)?;
        let last_t = self.states.back().map(|s| s.t).unwrap_or(f64::NEG_INFINITY);
        if (predicted.t - last_t - delta.preint.span()).abs() > crate::factors::INTERVAL_TOLERANCE {
            return Err(Error::IntervalMismatch { expected: delta.preint.span(), got: predicted.t - last_t });
        }
        let key = self.add_state(predicted)?;
        let f = imu_factor(prev, key, delta, gravity)?;
        self.factors.push(f);
        Ok(key)
    }

    /// Forward prediction of the next keyframe through `delta` from the newest state.
    pub fn predict_next(&self, delta: &ImuDelta, gravity: &Vector3<f64>) -> Option<NavState> {
        self.newest().map(|x| predict(x, &delta.preint, gravity))
    }

    pub fn add_factor(&mut self, f: FactorRecord) -> Result<()> {
        if let Some(k) = f.keys.iter().find(|k| self.state(**k).is_none()) {
            return Err(Error::UnknownKey(*k));
        }
        self.factors.push(f);
        Ok(())
    }

    fn gather(&self, f: &FactorRecord) -> Vec<&NavState> {
        f.keys.iter().map(|k| &self.states[k - self.first_key]).collect()
    }

    /// Total whitened cost ½Σ‖r‖².
    pub fn cost(&self) -> Result<f64> {
        let costs = par::try_map(self.settings.execution, &self.factors, |f| f.cost(&self.gather(f)))?;
        Ok(costs.iter().sum())
    }

    /// Unwhitened residual of every factor at the current states.
    pub fn residuals(&self) -> Result<Vec<DVector<f64>>> {
        par::try_map(self.settings.execution, &self.factors, |f| f.residual(&self.gather(f)))
    }

    fn bandwidth(&self) -> usize {
        self.factors
            .iter()
            .map(|f| {
                let lo = f.keys.iter().min().copied().unwrap_or(0);
                let hi = f.keys.iter().max().copied().unwrap_or(0);
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    fn linearize_all(&self) -> Result<Vec<Linearization>> {
        par::try_map(self.settings.execution, &self.factors, |f| f.whitened(&self.gather(f)))
    }

    /// Normal equations `H·δ = −g` in band form. Accumulation follows factor
    /// order so the result does not depend on the execution mode.
    fn normal_equations(&self, lins: &[Linearization]) -> (BandedMatrix, DVector<f64>, f64) {
        let n = self.states.len();
        let mut h = BandedMatrix::zeros(n, self.bandwidth());
        let mut g = DVector::zeros(n * STATE_DIM);
        let mut cost = 0.0;
        for (f, lin) in self.factors.iter().zip(lins) {
            cost += 0.5 * lin.residual.norm_squared();
            for (a, ja) in f.keys.iter().zip(&lin.jacobians) {
                let ia = a - self.first_key;
                let mut ga = g.rows_mut(ia * STATE_DIM, STATE_DIM);
                ga += ja.transpose() * &lin.residual;
                for (b, jb) in f.keys.iter().zip(&lin.jacobians) {
                    let ib = b - self.first_key;
                    if ia >= ib {
                        let blk = ja.transpose() * jb;
                        h.add(ia, ib, &Block::from_column_slice(blk.as_slice()));
                    }
                }
            }
        }
        (h, g, cost)
    }

    fn retract_all(&self, delta: &DVector<f64>) -> VecDeque<NavState> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, x)| x.retract(&Tangent::from_column_slice(delta.rows(i * STATE_DIM, STATE_DIM).as_slice())))
            .collect()
    }

    fn refresh_biases(&mut self) -> Result<()> {
        let threshold = self.settings.repropagation;
        let first = self.first_key;
        for f in &mut self.factors {
            let anchor = &self.states[f.keys[0] - first];
            f.refresh_bias(anchor, &threshold)?;
        }
        Ok(())
    }

    /// Minimizes the whitened cost over all window states.
    pub fn solve(&mut self) -> Result<SolveReport> {
        let start = Instant::now();
        if self.factors.is_empty() || self.states.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.refresh_biases()?;
        let s = self.settings;
        let mut lambda = match s.method {
            Method::GaussNewton => 0.0,
            Method::LevenbergMarquardt => s.initial_lambda,
        };
        let lins = self.linearize_all()?;
        let (mut h, mut g, mut cost) = self.normal_equations(&lins);
        let initial_cost = cost;
        let mut converged = false;
        let mut iterations = 0;
        let mut grad = g.amax();
        // Factor once up front so an unconstrained gauge is reported even when
        // the start point already has zero gradient.
        h.solve(&g)?;
        while iterations < s.max_iterations {
            if grad < s.gradient_tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = None;
            for _ in 0..12 {
                let mut hd = h.clone();
                if lambda > 0.0 {
                    hd.add_diagonal(lambda, 1e-9);
                }
                let step = match hd.solve(&(-&g)) {
                    Ok(step) => step,
                    Err(e) if lambda == 0.0 => return Err(e),
                    Err(_) => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let trial = self.retract_all(&step);
                let old = std::mem::replace(&mut self.states, trial);
                let new_cost = self.cost()?;
                if new_cost <= cost {
                    accepted = Some((step, new_cost));
                    lambda = if lambda > 0.0 { (lambda * 0.1).max(1e-12) } else { 0.0 };
                    break;
                }
                self.states = old;
                lambda = if lambda == 0.0 { s.initial_lambda } else { lambda * 10.0 };
            }
            let Some((step, new_cost)) = accepted else {
                // no descent possible at working precision
                converged = true;
                break;
            };
            let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
            let lins = self.linearize_all()?;
            (h, g, cost) = self.normal_equations(&lins);
            grad = g.amax();
            if decrease < s.relative_cost_tolerance || step.amax() < s.step_tolerance {
                converged = true;
                break;
            }
        }
        if grad < s.gradient_tolerance {
            converged = true;
        }
        Ok(SolveReport {
            iterations,
            initial_cost,
            final_cost: cost,
            gradient_norm: grad,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Number of preintegration intervals currently in the window.
    pub fn intervals(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Marginalizes oldest states until the window bound holds.
    pub fn slide(&mut self) -> Result<usize> {
        let mut removed = 0;
        if let WindowSize::Sliding(n) = self.window {
            while self.intervals() > n {
                self.marginalize_oldest()?;
                removed += 1;
            }
        }
        Ok(removed)
    }

    /// Eliminates the oldest state by Schur complement, folding every factor
    /// that touches it into a square-root prior on its neighbours, linearized
    /// at their current estimates.
    pub fn marginalize_oldest(&mut self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::InvalidInput("cannot marginalize the only state".into()));
        }
        let k0 = self.first_key;
        let (touching, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.factors).into_iter().partition(|f| f.keys.contains(&k0));
        self.factors = rest;

        let mut keep: Vec<usize> = touching.iter().flat_map(|f| f.keys.iter().copied()).filter(|k| *k != k0).collect();
        keep.sort_unstable();
        keep.dedup();

        let order: Vec<usize> = std::iter::once(k0).chain(keep.iter().copied()).collect();
        let dim = order.len() * STATE_DIM;
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        for f in &touching {
            let lin = f.whitened(&self.gather(f))?;
            for (a, ja) in f.keys.iter().zip(&lin.jacobians) {
                let ia = order.iter().position(|k| k == a).expect("key in order") * STATE_DIM;
                let mut ga = g.rows_mut(ia, STATE_DIM);
                ga += ja.transpose() * &lin.residual;
                for (b, jb) in f.keys.iter().zip(&lin.jacobians) {
                    let ib = order.iter().position(|k| k == b).expect("key in order") * STATE_DIM;
                    let mut hv = h.view_mut((ia, ib), (STATE_DIM, STATE_DIM));
                    hv += ja.transpose() * jb;
                }
            }
        }

        let lin_points: Vec<NavState> = keep.iter().map(|k| self.states[k - k0].clone()).collect();
        self.states.pop_front();
        self.first_key += 1;
        if keep.is_empty() {
            return Ok(());
        }
        let (hm, gm) = schur_complement(&h, &g, STATE_DIM)?;
        let prior = square_root_prior(&hm, &gm, lin_points);
        self.factors.push(marginal_factor(keep, prior)?);
        Ok(())
    }
}

/// Eliminates the first `m` variables of the system `(H, g)`.
pub fn schur_complement(h: &DMatrix<f64>, g: &DVector<f64>, m: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = h.nrows();
    let hmm = h.view((0, 0), (m, m)).into_owned();
    let hrm = h.view((m, 0), (n - m, m)).into_owned();
    let hrr = h.view((m, m), (n - m, n - m)).into_owned();
    let gm = g.rows(0, m).into_owned();
    let gr = g.rows(m, n - m).into_owned();
    // Symmetric pseudo-inverse tolerates states that carried no information.
    let eig = ((&hmm + hmm.transpose()) * 0.5).symmetric_eigen();
    let tol = eig.eigenvalues.amax() * 1e-12;
    let inv_vals = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    let hmm_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let k = &hrm * hmm_inv;
    let hs = hrr - &k * hrm.transpose();
    let gs = gr - k * gm;
    Ok(((&hs + hs.transpose()) * 0.5, gs))
}

/// `(J, r)` with `JᵀJ = H` and `Jᵀr = g`, dropping null directions.
fn square_root_prior(h: &DMatrix<f64>, g: &DVector<f64>, linearization: Vec<NavState>) -> MarginalPrior {
    let eig = h.clone().symmetric_eigen();
    let tol = eig.eigenvalues.amax().max(0.0) * 1e-14;
    let kept: Vec<usize> = (0..eig.eigenvalues.len()).filter(|i| eig.eigenvalues[*i] > tol).collect();
    let mut j = DMatrix::zeros(kept.len(), h.ncols());
    let mut r = DVector::zeros(kept.len());
    for (row, &i) in kept.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        j.row_mut(row).copy_from(&(v.transpose() * lam.sqrt()));
        r[row] = v.dot(g) / lam.sqrt();
    }
    MarginalPrior { linearization, jacobian: j, residual: r }
}
