//! Streaming factor-graph fusion of a measurement log.
//!
//! Keyframes are created at LBL epochs, and on a timer when LBL is silent.
//! Auxiliary measurements between two keyframes wait for the later one and are
//! then attached to the nearer keyframe through a forward or backward
//! preintegrated delta. The window is solved once per keyframe, as soon as a
//! later record arrives, and the newest state is reported.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};

use crate::config::{DvlFrame, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::{
    aux_factor, fbpf_route, lbl_factor, prior_factor, AuxKind, AuxMeasurement, AuxValue, BuoyArray, FactorRecord,
    FbpfRoute, ImuDelta, LblMeasurement,
};
use crate::geo::gravity_enu;
use crate::graph::{SlidingWindowGraph, SolveReport, SolverSettings, WindowSize};
use crate::imu::{Bias, Direction, ImuNoiseParams, ImuSample, PreintegratedImu, Scheme};
use crate::io::{Aiding, LogHeader, MeasurementLog, Record};
use crate::state::NavState;

/// Slack when comparing record and keyframe times (s).
const TIME_EPS: f64 = 1e-9;

/// Aiding sensors the estimator is allowed to use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorSet {
    pub lbl: bool,
    aux: HashSet<AuxKind>,
}

impl SensorSet {
    pub fn all() -> Self {
        Self { lbl: true, aux: [AuxKind::Gnss, AuxKind::Dvl, AuxKind::Mcp, AuxKind::Ps].into_iter().collect() }
    }

    pub fn parse(names: &[String]) -> Result<Self> {
        let mut s = Self { lbl: false, aux: HashSet::new() };
        for n in names {
            match n.to_ascii_lowercase().as_str() {
                "lbl" => s.lbl = true,
                "gnss" => _ = s.aux.insert(AuxKind::Gnss),
                "dvl" => _ = s.aux.insert(AuxKind::Dvl),
                "mcp" => _ = s.aux.insert(AuxKind::Mcp),
                "ps" => _ = s.aux.insert(AuxKind::Ps),
                other => return Err(Error::Config(format!("unknown sensor '{other}'"))),
            }
        }
        Ok(s)
    }

    pub fn uses(&self, kind: AuxKind) -> bool {
        self.aux.contains(&kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuserOptions {
    pub window: WindowSize,
    pub settings: SolverSettings,
    pub keyframe_interval: f64,
    pub sensors: SensorSet,
    /// Huber threshold on whitened aiding residuals.
    pub huber: Option<f64>,
}

impl Default for FuserOptions {
    fn default() -> Self {
        Self {
            window: WindowSize::Sliding(20),
            settings: SolverSettings::default(),
            keyframe_interval: 1.0,
            sensors: SensorSet::all(),
            huber: None,
        }
    }
}

impl FuserOptions {
    pub fn from_config(c: &SolverConfig) -> Result<Self> {
        if !(c.keyframe_interval_s > 0.0) {
            return Err(Error::Config("solver.keyframe_interval_s must be positive".into()));
        }
        Ok(Self {
            window: c.window()?,
            settings: c.settings(),
            keyframe_interval: c.keyframe_interval_s,
            sensors: SensorSet::parse(&c.sensors)?,
            huber: (c.huber > 0.0).then_some(c.huber),
        })
    }
}

/// Solver statistics of one keyframe epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub t: f64,
    pub report: SolveReport,
    pub states: usize,
    pub factors: usize,
}

pub struct Fuser {
    options: FuserOptions,
    noise: ImuNoiseParams,
    scheme: Scheme,
    buoys: Arc<BuoyArray>,
    lbl_extra_sigma: f64,
    dvl_frame: DvlFrame,
    gravity: Vector3<f64>,
    graph: SlidingWindowGraph,
    /// IMU samples from the one holding at the newest keyframe onwards.
    imu: Vec<ImuSample>,
    /// Auxiliary measurements after the newest keyframe.
    pending: Vec<AuxMeasurement>,
    last_t: f64,
    unsolved: bool,
    estimates: Vec<NavState>,
    stats: Vec<EpochStats>,
}

impl Fuser {
    /// Starts the window at the log's initial state and its uncertainty.
    pub fn new(header: &LogHeader, options: FuserOptions) -> Result<Self> {
        let mut graph = SlidingWindowGraph::new(options.window, options.settings);
        let key = graph.add_state(header.init.clone())?;
        let var = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(15, header.init_sigma.iter().map(|s| s * s)));
        graph.add_factor(prior_factor(key, header.init.clone(), var)?)?;
        Ok(Self {
            noise: header.imu_noise,
            scheme: header.scheme,
            buoys: Arc::new(header.buoys.clone()),
            lbl_extra_sigma: header.lbl_extra_sigma,
            dvl_frame: header.dvl_frame,
            gravity: gravity_enu(),
            graph,
            imu: Vec::new(),
            pending: Vec::new(),
            last_t: header.init.t,
            unsolved: true,
            estimates: Vec::new(),
            stats: Vec::new(),
            options,
        })
    }

    pub fn graph(&self) -> &SlidingWindowGraph {
        &self.graph
    }

    /// Newest state after each keyframe solve, in time order.
    pub fn estimates(&self) -> &[NavState] {
        &self.estimates
    }

    pub fn stats(&self) -> &[EpochStats] {
        &self.stats
    }

    fn newest_t(&self) -> f64 {
        self.graph.newest().map_or(f64::NEG_INFINITY, |x| x.t)
    }

    /// Feeds one record of a time-ordered log.
    pub fn process_measurement(&mut self, record: &Record, log: &MeasurementLog) -> Result<()> {
        let t = record.t();
        if t < self.last_t - TIME_EPS {
            return Err(Error::NonMonotonicTime { t, last: self.last_t });
        }
        self.last_t = self.last_t.max(t);
        if t > self.newest_t() + TIME_EPS && self.unsolved {
            self.solve_epoch()?;
        }
        if let Record::Imu(s) = record {
            self.imu.push(*s);
        }
        // Timer keyframes bridge LBL silence; the IMU record that crosses the
        // boundary is already buffered.
        while t > self.newest_t() + self.options.keyframe_interval + 1e-6 {
            let tk = self.newest_t() + self.options.keyframe_interval;
            self.add_keyframe(tk)?;
            self.solve_epoch()?;
        }
        match log.aiding(record) {
            None => Ok(()),
            Some(Aiding::Lbl(z)) => self.add_lbl(&z),
            Some(Aiding::Aux(z)) => self.add_aux(z),
        }
    }

    fn add_lbl(&mut self, z: &LblMeasurement) -> Result<()> {
        if !self.options.sensors.lbl {
            return Ok(());
        }
        let tk = self.newest_t();
        if z.t < tk - TIME_EPS {
            return Err(Error::StaleMeasurement { t: z.t, start: tk });
        }
        let key = if z.t > tk + TIME_EPS {
            self.add_keyframe(z.t)?
        } else {
            self.graph.newest_key().expect("window is never empty")
        };
        let f = lbl_factor(key, z, self.buoys.clone(), self.lbl_extra_sigma)?;
        self.push_aiding(f)
    }

    fn add_aux(&mut self, z: AuxMeasurement) -> Result<()> {
        if !self.options.sensors.uses(z.value.kind()) {
            return Ok(());
        }
        let tk = self.newest_t();
        if z.t < tk - TIME_EPS {
            return Err(Error::StaleMeasurement { t: z.t, start: tk });
        }
        if z.t <= tk + TIME_EPS {
            let key = self.graph.newest_key().expect("window is never empty");
            let anchor = self.graph.newest().expect("window is never empty").clone();
            let route = FbpfRoute { direction: Direction::Forward, offset: 0.0 };
            let delta = self.delta(tk, tk, &anchor, Direction::Forward)?;
            return self.attach_aux(key, &anchor, z, route, delta);
        }
        self.pending.push(z);
        Ok(())
    }

    fn push_aiding(&mut self, f: FactorRecord) -> Result<()> {
        self.graph.add_factor(f.with_huber(self.options.huber))?;
        self.unsolved = true;
        Ok(())
    }

    fn delta(&self, t0: f64, t1: f64, anchor: &NavState, direction: Direction) -> Result<ImuDelta> {
        let bias = Bias::new(anchor.ba, anchor.bg);
        let lo = self.imu.partition_point(|s| s.t <= t0 + TIME_EPS).saturating_sub(1);
        let hi = self.imu.partition_point(|s| s.t < t1 - TIME_EPS);
        let samples: Arc<[ImuSample]> = self.imu[lo..hi.max(lo + 1).min(self.imu.len())].into();
        let pre = if t1 > t0 {
            PreintegratedImu::over_span(&samples, t0, t1, bias, direction, self.noise, self.scheme)?
        } else {
            PreintegratedImu::new(bias, t0, direction).with_noise(self.noise).with_scheme(self.scheme)
        };
        Ok(ImuDelta::new(pre, samples))
    }

    fn attach_aux(
        &mut self,
        key: usize,
        anchor: &NavState,
        mut z: AuxMeasurement,
        route: FbpfRoute,
        delta: ImuDelta,
    ) -> Result<()> {
        if let (AuxValue::Dvl(vb), DvlFrame::Body) = (z.value, self.dvl_frame) {
            // Rotate with the predicted attitude at the measurement instant.
            let c = delta.preint.corrected_unchecked(&Vector3::zeros(), &Vector3::zeros());
            z.value = AuxValue::Dvl(anchor.q * c.gamma * vb);
        }
        let f = aux_factor(key, &z, route, delta, self.gravity)?;
        self.push_aiding(f)
    }

    /// Appends a keyframe at `t`, predicted through the buffered IMU samples,
    /// and routes the pending auxiliary measurements it closes.
    fn add_keyframe(&mut self, t: f64) -> Result<usize> {
        let prev = self.graph.newest().expect("window is never empty").clone();
        let prev_key = self.graph.newest_key().expect("window is never empty");
        let delta = self.delta(prev.t, t, &prev, Direction::Forward)?;
        let mut predicted = crate::factors::predict(&prev, &delta.preint, &self.gravity);
        predicted.t = t;
        let key = self.graph.add_keyframe(delta, predicted.clone(), self.gravity)?;
        self.unsolved = true;

        let (due, later): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|z| z.t <= t + TIME_EPS);
        self.pending = later;
        for z in due {
            let route = fbpf_route(z.t.min(t), prev.t, t)?;
            let (k, anchor, delta) = match route.direction {
                Direction::Forward => (prev_key, &prev, self.delta(prev.t, z.t, &prev, Direction::Forward)?),
                Direction::Backward => (key, &predicted, self.delta(z.t, t, &predicted, Direction::Backward)?),
            };
            let anchor = anchor.clone();
            self.attach_aux(k, &anchor, z, route, delta)?;
        }

        let keep = self.imu.partition_point(|s| s.t <= t + TIME_EPS).saturating_sub(1);
        self.imu.drain(..keep);
        self.graph.slide()?;
        Ok(key)
    }

    fn solve_epoch(&mut self) -> Result<()> {
        let report = self.graph.solve()?;
        let t = self.newest_t();
        self.stats.push(EpochStats { t, report, states: self.graph.len(), factors: self.graph.factors().len() });
        self.estimates.push(self.graph.newest().expect("window is never empty").clone());
        self.unsolved = false;
        Ok(())
    }

    /// Solves any keyframe still waiting for a later record.
    pub fn finish(&mut self) -> Result<()> {
        if self.unsolved {
            self.solve_epoch()?;
        }
        Ok(())
    }
}

/// Result of one complete run.
#[derive(Clone, Debug)]
pub struct FusionRun {
    pub estimates: Vec<NavState>,
    pub stats: Vec<EpochStats>,
    pub wall_time: f64,
}

impl FusionRun {
    pub fn solve_time(&self) -> f64 {
        self.stats.iter().map(|s| s.report.wall_time).sum()
    }
}

/// Replays `log` through a [`Fuser`]. Stale measurements are dropped with a
/// warning.
pub fn fuse_log(log: &MeasurementLog, options: FuserOptions) -> Result<FusionRun> {
    let start = Instant::now();
    let mut f = Fuser::new(&log.header, options)?;
    for r in &log.records {
        match f.process_measurement(r, log) {
            Err(Error::StaleMeasurement { t, start }) => {
                log::warn!("dropping {} record at {t} s, before the window start {start} s", r.tag());
            }
            other => other?,
        }
    }
    f.finish()?;
    Ok(FusionRun { estimates: f.estimates, stats: f.stats, wall_time: start.elapsed().as_secs_f64() })
}

/// Options for comparing runs on one log, keeping everything but the window.
pub fn with_window(options: &FuserOptions, window: WindowSize) -> FuserOptions {
    FuserOptions { window, ..options.clone() }
}
