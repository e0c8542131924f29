use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("parameter `{0}` is not part of the scene")]
    MissingParam(String),

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("spring endpoints are {separation:e} apart, below the {min:e} separation limit")]
    SpringCollapse { separation: f64, min: f64 },

    #[error("ODE state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("homography maps a point to the plane at infinity (denominator {denominator:e})")]
    Homography { denominator: f64 },

    #[error("time {time} is outside the trajectory coverage [{start}, {end}]")]
    TimeOutOfRange { time: f64, start: f64, end: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("family mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::FamilyMismatch { .. } => 2,
            Error::Data(_) | Error::Io { .. } | Error::DegenerateMask(_) => 3,
            _ => 4,
        }
    }
}
