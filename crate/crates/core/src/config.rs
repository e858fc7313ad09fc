//! TOML configuration shared by the simulator and the estimators.
//!
//! Every key has a default, so an empty file is a valid configuration of the
//! reference complex-dynamics scenario.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::BuoyArray;
use crate::geo::{Lla, GRAVITY_MAGNITUDE};
use crate::graph::{Method, SolverSettings, WindowSize};
use crate::imu::{ImuNoiseParams, Scheme};
use crate::par::Execution;
use crate::sim::{MotionScript, Segment};

const UG: f64 = 1e-6 * GRAVITY_MAGNITUDE;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub trajectory: TrajectoryConfig,
    pub imu: ImuConfig,
    pub lbl: LblConfig,
    pub gnss: GnssConfig,
    pub dvl: DvlConfig,
    pub mcp: McpConfig,
    pub ps: PsConfig,
    pub solver: SolverConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trajectory;
        if !(t.duration_s > 0.0) {
            return Err(Error::Config("trajectory.duration_s must be positive".into()));
        }
        if !(self.imu.rate_hz > 0.0) {
            return Err(Error::Config("imu.rate_hz must be positive".into()));
        }
        self.imu.noise().validate()?;
        let rates = [
            ("lbl", self.lbl.rate_hz, self.lbl.offset_s, &self.lbl.dropouts),
            ("gnss", self.gnss.rate_hz, self.gnss.offset_s, &self.gnss.dropouts),
            ("dvl", self.dvl.rate_hz, self.dvl.offset_s, &self.dvl.dropouts),
            ("mcp", self.mcp.rate_hz, self.mcp.offset_s, &self.mcp.dropouts),
            ("ps", self.ps.rate_hz, self.ps.offset_s, &self.ps.dropouts),
        ];
        for (name, rate, offset, drops) in rates {
            if !(rate > 0.0) {
                return Err(Error::Config(format!("{name}.rate_hz must be positive")));
            }
            if !(0.0..1.0 / rate).contains(&offset) {
                return Err(Error::Config(format!("{name}.offset_s must lie in [0, 1/rate)")));
            }
            // An outage may outlast the mission; it is clipped at the end.
            if drops.iter().any(|d| !(d[0] <= d[1]) || d[0] < 0.0 || d[0] > t.duration_s) {
                return Err(Error::Config(format!("{name}.dropouts must be ordered intervals starting within the mission")));
            }
        }
        if self.lbl.buoys.len() < 2 {
            return Err(Error::Config("lbl.buoys needs at least two positions".into()));
        }
        self.buoys()?;
        if !(self.lbl.ranging_sigma_m > 0.0) {
            return Err(Error::Config("lbl.ranging_sigma_m must be positive".into()));
        }
        self.solver.window()?;
        Ok(())
    }

    pub fn buoys(&self) -> Result<BuoyArray> {
        let b: Vec<Vector3<f64>> = self.lbl.buoys.iter().map(|p| Vector3::from(*p)).collect();
        let r = self.lbl.reference;
        if r >= b.len() {
            return Err(Error::Config("lbl.reference out of range".into()));
        }
        let others = b.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, p)| *p).collect();
        BuoyArray::new(b[r], others)
    }

    pub fn origin(&self) -> Result<Lla> {
        Lla::from_degrees(self.gnss.origin_lat_deg, self.gnss.origin_lon_deg, self.gnss.origin_alt_m)
    }

    pub fn script(&self) -> MotionScript {
        let t = &self.trajectory;
        let segments = match t.scenario {
            Scenario::Complex => MotionScript::complex_segments(),
            Scenario::Stable => MotionScript::stable_segments(t.duration_s),
            Scenario::Custom => t.segments.clone(),
        };
        MotionScript {
            initial_position: Vector3::from(t.initial_position),
            initial_heading: t.initial_heading_deg.to_radians(),
            initial_speed: t.initial_speed,
            segments,
            duration: t.duration_s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Sinking, turning, accelerating and floating (the reference mission).
    #[default]
    Complex,
    /// Straight line at constant speed on the surface.
    Stable,
    /// `segments` as given.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub scenario: Scenario,
    pub duration_s: f64,
    /// Heading counter-clockwise from East (deg).
    pub initial_heading_deg: f64,
    pub initial_speed: f64,
    pub initial_position: [f64; 3],
    pub segments: Vec<Segment>,
    /// Zero every synthesized noise, bias and alignment error. Nominal σ
    /// values are still written to the log for the estimators.
    pub noise_free: bool,
    /// Alignment error of the initial state (1σ).
    pub init_position_sigma_m: f64,
    pub init_velocity_sigma_m_s: f64,
    pub init_roll_pitch_sigma_deg: f64,
    pub init_yaw_sigma_deg: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Complex,
            duration_s: 2217.0,
            initial_heading_deg: 90.0,
            initial_speed: 0.0,
            initial_position: [0.0; 3],
            segments: Vec::new(),
            noise_free: false,
            init_position_sigma_m: 0.05,
            init_velocity_sigma_m_s: 0.01,
            init_roll_pitch_sigma_deg: 0.01,
            init_yaw_sigma_deg: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuConfig {
    pub rate_hz: f64,
    pub gyro_bias_deg_per_h: f64,
    pub arw_deg_per_sqrt_h: f64,
    pub accel_bias_ug: f64,
    pub vrw_ug_per_sqrt_hz: f64,
    /// rad/s/√s
    pub gyro_bias_walk: f64,
    /// m/s²/√s
    pub accel_bias_walk: f64,
    pub scheme: Scheme,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            rate_hz: 200.0,
            gyro_bias_deg_per_h: 25.0,
            arw_deg_per_sqrt_h: 0.1,
            accel_bias_ug: 100.0,
            vrw_ug_per_sqrt_hz: 100.0,
            gyro_bias_walk: 1e-6,
            accel_bias_walk: 1e-5,
            scheme: Scheme::Euler,
        }
    }
}

impl ImuConfig {
    pub fn noise(&self) -> ImuNoiseParams {
        ImuNoiseParams {
            gyro_bias: self.gyro_bias_deg_per_h.to_radians() / 3600.0,
            accel_bias: self.accel_bias_ug * UG,
            gyro_noise_density: self.arw_deg_per_sqrt_h.to_radians() / 60.0,
            accel_noise_density: self.vrw_ug_per_sqrt_hz * UG,
            gyro_bias_walk: self.gyro_bias_walk,
            accel_bias_walk: self.accel_bias_walk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LblConfig {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub ranging_sigma_m: f64,
    /// ENU positions (m).
    pub buoys: Vec<[f64; 3]>,
    /// Index into `buoys` of the reference buoy.
    pub reference: usize,
    /// Extra per-difference σ folded into the factor covariance (m).
    pub extra_sigma_m: f64,
    /// Systematic slant-range-difference error model of the filter baseline.
    pub dr_sigma_m: f64,
    pub dr_tau_s: f64,
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for LblConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rate_hz: 1.0,
            offset_s: 0.0,
            ranging_sigma_m: 0.3,
            buoys: vec![[0.0, -500.0, 0.0], [-400.0, 0.0, 0.0], [-200.0, 1000.0, 0.0], [200.0, 500.0, 0.0]],
            reference: 0,
            extra_sigma_m: 0.0,
            dr_sigma_m: 0.05,
            dr_tau_s: 1000.0,
            dropouts: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssConfig {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub sigma_horizontal_m: f64,
    pub sigma_vertical_m: f64,
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    pub origin_alt_m: f64,
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for GnssConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rate_hz: 1.0,
            offset_s: 0.0,
            sigma_horizontal_m: 0.02,
            sigma_vertical_m: 0.01,
            origin_lat_deg: 30.0,
            origin_lon_deg: 120.0,
            origin_alt_m: 0.0,
            dropouts: vec![[17.0, 1783.0]],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DvlFrame {
    #[default]
    World,
    Body,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvlConfig {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub sigma_m_s: f64,
    pub frame: DvlFrame,
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for DvlConfig {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 1.0, offset_s: 0.3, sigma_m_s: 0.01, frame: DvlFrame::World, dropouts: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McpConfig {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub sigma_deg: f64,
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for McpConfig {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 1.0, offset_s: 0.5, sigma_deg: 0.01, dropouts: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsConfig {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub sigma_m: f64,
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 1.0, offset_s: 0.7, sigma_m: 0.01, dropouts: Vec::new() }
    }
}

/// Estimator settings. These do not affect simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of preintegration intervals, or "global".
    pub window: String,
    pub method: Method,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub execution: Execution,
    /// Keyframe spacing when no LBL epoch arrives (s).
    pub keyframe_interval_s: f64,
    /// Sensors fused besides the IMU.
    pub sensors: Vec<String>,
    /// Huber threshold (whitened units) applied to aiding factors; 0 disables.
    pub huber: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            window: "20".into(),
            method: Method::GaussNewton,
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            relative_cost_tolerance: 1e-10,
            execution: Execution::default(),
            keyframe_interval_s: 1.0,
            sensors: ["lbl", "gnss", "dvl", "mcp", "ps"].map(String::from).to_vec(),
            huber: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn window(&self) -> Result<WindowSize> {
        self.window.parse()
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            method: self.method,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            relative_cost_tolerance: self.relative_cost_tolerance,
            execution: self.execution,
            ..SolverSettings::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.trajectory.scenario = Scenario::Custom;
        c.trajectory.segments = vec![Segment::Cruise { duration: 10.0 }, Segment::Turn { duration: 5.0, rate_deg_s: 3.0 }];
        c.lbl.dropouts = vec![[1683.0, 1783.0]];
        c.solver.window = "global".into();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn table_one_units() {
        let n = ImuConfig::default().noise();
        assert!((n.gyro_bias - 1.2120342e-4).abs() < 1e-10);
        assert!((n.accel_bias - 9.80665e-4).abs() < 1e-12);
        assert!((n.gyro_noise_density - 2.9088821e-5).abs() < 1e-12);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Config::from_toml("[imu]\nrate_hz = -1").is_err());
        assert!(Config::from_toml("[dvl]\noffset_s = 1.5").is_err());
        assert!(Config::from_toml("[solver]\nwindow = \"zero\"").is_err());
        assert!(Config::from_toml("[nope]\nx = 1").is_err());
    }
}
