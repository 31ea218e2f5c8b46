//! Tangent-linearized Gaussian inference on embedded submanifolds.
//!
//! The crate provides ambient Gaussian laws, manifold models with projection,
//! retraction and chart maps, closed-form affine marginalization and
//! conditioning, exact and surrogate pushforward samplers, W2 estimators, and
//! the stability bounds and runtime gate built on top of them. Two benchmark
//! drivers (a circle sweep and a planar-pushing trajectory) exercise the whole
//! pipeline.

pub mod affine;
pub mod bounds;
pub mod circle;
pub mod error;
pub mod gate;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod pushforward;
pub mod pushing;
pub mod rng;
pub mod tolerances;
pub mod wasserstein;

pub use affine::{condition_affine, condition_tangent_coords, lift_tangent_law, marginalize_affine, AffineManifold};
pub use bounds::{
    cond_bound, marg_bound, runtime_gate, CondBoundReport, GateDecision, GateThresholds, MargBoundReport, Verdict,
};
pub use error::{Error, Result};
pub use gaussian::{fourth_moment, gaussian_tail_bound, gaussian_w2, EmpiricalMeasure, Gaussian};
pub use manifold::{ChartConstants, ChartKind, Constraint, LevelSet, ManifoldModel, ManifoldSpec, TangentFrame};
pub use pushforward::PushforwardSpec;
pub use tolerances::Tolerances;
pub use wasserstein::{w2_1d, w2_assignment, w2_coupled_upper, W2Estimate, W2Method};
