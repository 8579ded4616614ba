use thiserror::Error;

use crate::grid::Point;

pub type Result<T, E = MfgError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfgError {
    #[error("point ({:.6}, {:.6}) lies outside the computational box beyond the clamp margin", .point[0], .point[1])]
    DomainEscape { point: Point },

    #[error("particle {particle} left the computational box at t = {time:.6}: ({:.6}, {:.6})", .point[0], .point[1])]
    ParticleEscape { particle: usize, time: f64, point: Point },

    #[error("particle {particle} at t = {time:.6} is within two cells of the box boundary; enlarge the box")]
    BoundaryProximity { particle: usize, time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("exact transport is capped at {cap} support points (got {got}); downsample the measures first")]
    CapExceeded { cap: usize, got: usize },

    #[error("model validation failed: {0}")]
    ModelValidation(String),

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { solver: &'static str, iterations: usize, residual: f64 },

    #[error("measure is not a static equilibrium: residual {residual:.3e} exceeds {tol:.3e}")]
    StaticResidual { residual: f64, tol: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
