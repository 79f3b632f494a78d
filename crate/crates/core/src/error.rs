use thiserror::Error;

/// Errors raised by the simulation and imaging pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no propagating modes at omega = {omega}")]
    NoPropagatingModes { omega: f64 },

    #[error("mode {j} is evanescent at omega = {omega} (only {count} propagating modes)")]
    EvanescentMode { j: usize, omega: f64, count: usize },

    #[error("mode {j} sits exactly at cutoff (beta = 0) at omega = {omega}")]
    CutoffMode { j: usize, omega: f64 },

    #[error("coordinate x = {x} lies outside [0, {a}]")]
    OutOfRange { x: f64, a: f64 },

    #[error("sampling grid too coarse: {0}")]
    Resolution(String),

    #[error("step {step} exceeds the stability bound {bound}")]
    Stability { step: f64, bound: f64 },

    #[error("propagator unitarity defect {defect:e} exceeds {tolerance:e}")]
    Integration { defect: f64, tolerance: f64 },

    #[error("coupling graph is reducible; no equipartition")]
    NoEquipartition,

    #[error("unsupported correlation model: {0}")]
    UnsupportedModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("lag {lag} outside the tabulated range [{min}, {max}]")]
    LagRange { lag: f64, min: f64, max: f64 },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("field evaluation at z = {z} outside the validity window [{lo}, {hi}]")]
    ValidityWindow { z: f64, lo: f64, hi: f64 },

    #[error("realization {index} failed: {source}")]
    Realization {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
