use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate cell parameters: {0}")]
    DegenerateParams(String),

    #[error("solver did not converge after {iterations} iterations ({what})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error(
        "calibration failed: best relative residual {best_residual:.4e} exceeds {tolerance:.1e}"
    )]
    CalibrationFailure { best_residual: f64, tolerance: f64 },

    #[error("value {value} outside valid range [{lo}, {hi}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("unknown converter topology `{0}`")]
    UnknownTopology(String),

    #[error("unknown operation kind `{0}`")]
    UnknownOpKind(String),

    #[error("converter gain undefined at duty {duty} (denominator {denominator:.3e})")]
    GainUndefined { duty: f64, denominator: f64 },

    #[error("topology `{0}` has a duty-independent gain and cannot be regulated by MPPT")]
    NonActuatable(String),

    #[error("trace time is not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("negative irradiance {value} at row {row}")]
    NegativeIrradiance { row: usize, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("run log is empty")]
    EmptyLog,

    #[error("every sample of the run log is dark")]
    AllDark,

    #[error("event time {0} s lies outside the run log")]
    EventOutOfRange(f64),

    #[error("invalid steady-state window [{0}, {1}]")]
    WindowInvalid(f64, f64),

    #[error("simulation step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by user input (bad names, files, configs) as
    /// opposed to numerical failures during a simulation.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::UnknownScenario(_)
            | Error::UnknownAlgorithm(_)
            | Error::UnknownTopology(_)
            | Error::UnknownOpKind(_)
            | Error::NonMonotoneTime { .. }
            | Error::NegativeIrradiance { .. }
            | Error::Parse(_)
            | Error::Config(_)
            | Error::Io { .. } => true,
            Error::AtStep { source, .. } => source.is_usage(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
