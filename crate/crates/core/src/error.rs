use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("position coincides with a buoy; slant-range geometry is degenerate")]
    DegenerateGeometry,
    #[error("measurement time {t} outside interval [{start}, {end}]")]
    OutOfInterval { t: f64, start: f64, end: f64 },
    #[error("preintegration direction does not match the requested operation")]
    DirectionMismatch,
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("bias moved beyond the first-order correction threshold; repropagate")]
    RepropagationRequired,
    #[error("interval length {got} s does not match preintegrated span {expected} s")]
    IntervalMismatch { expected: f64, got: f64 },
    #[error("keyframe time {t} is not after the previous keyframe {last}")]
    NonMonotonicTime { t: f64, last: f64 },
    #[error("normal equations are singular (unconstrained gauge)")]
    SingularNormalEquations,
    #[error("measurement at {t} predates the window start {start}")]
    StaleMeasurement { t: f64, start: f64 },
    #[error("motion script is empty")]
    EmptyScript,
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("no records inside the requested interval")]
    EmptyInterval,
    #[error("unknown state key {0}")]
    UnknownKey(usize),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularNormalEquations | Error::RepropagationRequired | Error::DegenerateGeometry
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
