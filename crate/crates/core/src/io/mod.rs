//! File formats: measurement logs, truth and estimate CSV, metrics summaries.

mod csv;
mod log;

pub use csv::{read_estimates, read_truth, write_estimates, write_truth, EstimateRow, TruthRow};
pub use log::{quantize_time, Aiding, LogHeader, MeasurementLog, Record, LOG_MAGIC};
