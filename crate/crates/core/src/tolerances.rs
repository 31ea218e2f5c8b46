//! Numerical tolerances shared by the geometry, inference and solver code.
//!
//! Every threshold lives in [`Tolerances`]; `Tolerances::default()` carries
//! the values the rest of the crate is tested against.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative asymmetry accepted before a covariance is rejected.
    pub symmetry_rel: f64,
    /// Eigenvalues below `psd_clamp_rel * lambda_max` are clamped to zero.
    pub psd_clamp_rel: f64,
    /// Negative eigenvalues beyond `-psd_reject_rel * lambda_max` are an error.
    pub psd_reject_rel: f64,
    /// Minimum eigenvalue (relative to `lambda_max`) for a usable precision.
    pub precision_min_rel: f64,
    /// Constraint residual accepted for on-manifold points.
    pub on_manifold: f64,
    /// Constraint residual targeted by the projection solver.
    pub projection_residual: f64,
    /// Tangential component of `x - g(x)` accepted at a projection.
    pub normality_residual: f64,
    /// Smallest singular value of `Df` accepted as full rank.
    pub rank_sigma_min: f64,
    pub projection_max_iter: usize,
    /// Finite-difference step, scaled by `max(1, |x|)`.
    pub fd_step: f64,
    /// Fraction of failed projections tolerated by samplers.
    pub max_failure_fraction: f64,
    /// Minimum effective sample size, as a fraction of the budget.
    pub min_ess_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symmetry_rel: 1e-12,
            psd_clamp_rel: 1e-12,
            psd_reject_rel: 1e-9,
            precision_min_rel: 1e-14,
            on_manifold: 1e-9,
            projection_residual: 1e-10,
            normality_residual: 1e-8,
            rank_sigma_min: 1e-8,
            projection_max_iter: 100,
            fd_step: 1e-6,
            max_failure_fraction: 1e-3,
            min_ess_fraction: 0.05,
        }
    }
}
