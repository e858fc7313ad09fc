//! Deterministic truth trajectories and sensor synthesis.

mod sensors;
mod trajectory;

pub use sensors::{
    epochs, simulate, synthesize_aux, synthesize_imu, synthesize_lbl, AuxChannel, ImuErrors, SensorStreams, Stream,
};
pub use trajectory::{build_trajectory, MotionScript, Segment, Trajectory, TruthSample};
