use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("covariance is singular (min eigenvalue {min_eigenvalue:e}); a precision matrix is required")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("constraint Jacobian is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("point lies outside the projection tube (distance {distance} >= reach {reach})")]
    TubeViolation { distance: f64, reach: f64 },

    #[error("projection is undefined at the sphere center")]
    ProjectionAtCenter,

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("chart radius exceeded: |v| = {norm} > {max}")]
    ChartRadiusExceeded { norm: f64, max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too many failed samples: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("effective sample size {ess:.1} is below {min:.1}; the chart radius is too large for the proposal")]
    EffectiveSampleSizeTooLow { ess: f64, min: f64 },

    #[error("assignment size {n} exceeds the cap {cap}")]
    AssignmentTooLarge { n: usize, cap: usize },

    #[error("measures must have uniform weights and equal sizes")]
    NonUniformMeasure,

    #[error("grid density is not normalized (mass {mass})")]
    NotNormalized { mass: f64 },

    #[error("probe center coincides with a corner-arc center; the contact gradient is undefined")]
    DegenerateContact,

    #[error("probe path is infeasible at step {step}: {reason}")]
    InfeasiblePath { step: usize, reason: String },

    #[error("samples concentrate near the antipode; angular unwrapping is invalid")]
    AntipodalMass,

    #[error("missing constant: {0}")]
    MissingConstant(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
