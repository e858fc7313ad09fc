//! Sliding-window factor-graph fusion of IMU, LBL and auxiliary sensors for
//! underwater navigation, with an EKF baseline and a trajectory simulator.

pub mod config;
pub mod ekf;
pub mod error;
pub mod factors;
pub mod geo;
pub mod graph;
pub mod imu;
pub mod metrics;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
