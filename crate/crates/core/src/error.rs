use thiserror::Error;

/// Errors raised by model construction, evaluation, transforms and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid state: component {index} is not finite ({value})")]
    InvalidState { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid coefficient family: {0}")]
    InvalidFamily(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("diffusion coefficient of particle {particle} is negative at x = {x}: {value}")]
    NegativeDiffusion { particle: usize, x: f64, value: f64 },

    #[error("alpha is unbounded or undefined at u = {u}")]
    AlphaUnbounded { u: f64 },

    #[error("invalid transform parameters: {0}")]
    InvalidTransform(String),

    #[error("inversion of the distortion map failed at z = ({}, {})", z[0], z[1])]
    InversionFailed { z: [f64; 2] },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("analysis error: {0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, Error>;
