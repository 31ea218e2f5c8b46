//! Config-driven evaluation of the marginalization bound and the runtime
//! escalation gate for a single Gaussian and manifold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    c_tail_moment, calibrate_c_loc, marg_bound, runtime_gate, BoundSummary, GateDecision, GateIndicators,
    GateThresholds, MargBoundReport, MargConstants, TailMode,
};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::io::{config_hash, FlatConfig, Table};
use crate::manifold::ManifoldSpec;
use crate::pushforward::{coupled_marginal_samples, PushforwardSpec};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub manifold: ManifoldSpec,
    pub mean: Vec<f64>,
    /// Diagonal of the ambient covariance.
    pub cov_diag: Vec<f64>,
    /// Admissible W2 error.
    pub tolerance: f64,
    /// Chart radius; the localization radius capped at `0.49 * reach` when absent.
    pub radius: Option<f64>,
    pub localization_t: f64,
    /// Fixed `C_tail`; moment mode on coupled samples when absent.
    pub c_tail: Option<f64>,
    pub c_loc_points: usize,
    pub c_loc_quantile: f64,
    pub c_loc_safety: f64,
    pub samples: usize,
    pub thresholds: GateThresholds,
    pub seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldSpec::Circle { radius: 1.0 },
            mean: vec![1.2, 0.0],
            cov_diag: vec![0.0025, 0.0025],
            tolerance: 0.1,
            radius: None,
            localization_t: 3.0,
            c_tail: None,
            c_loc_points: 500,
            c_loc_quantile: 0.9,
            c_loc_safety: 1.5,
            samples: 20_000,
            thresholds: GateThresholds::default(),
            seed: 0,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "manifold",
    "manifold_radius",
    "sphere_dim",
    "half_width",
    "half_height",
    "corner_radius",
    "mean",
    "cov_diag",
    "tolerance",
    "radius",
    "localization_t",
    "c_tail",
    "c_loc_points",
    "c_loc_quantile",
    "c_loc_safety",
    "samples",
    "s_c_max",
    "s_delta_max",
    "seed",
];

impl GateConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        c.check_known(CONFIG_KEYS)?;
        let d = Self::default();
        let manifold = match c.str_or("manifold", "circle")?.as_str() {
            "circle" => ManifoldSpec::Circle {
                radius: c.f64_or("manifold_radius", 1.0)?,
            },
            "sphere" => ManifoldSpec::Sphere {
                dim: c.usize_or("sphere_dim", 3)?,
                radius: c.f64_or("manifold_radius", 1.0)?,
            },
            "box-boundary" => ManifoldSpec::BoxBoundary {
                half_width: c.f64_or("half_width", 0.2)?,
                half_height: c.f64_or("half_height", 1.0)?,
                corner_radius: c.f64_or("corner_radius", 0.02)?,
                offset: 0.0,
            },
            other => return Err(Error::Config(format!("unknown manifold `{other}`"))),
        };
        let optional = |key: &str| -> Result<Option<f64>> {
            if c.keys().any(|k| k == key) {
                Ok(Some(c.f64_or(key, 0.0)?))
            } else {
                Ok(None)
            }
        };
        let cfg = Self {
            manifold,
            mean: c.f64_list_or("mean", &d.mean)?,
            cov_diag: c.f64_list_or("cov_diag", &d.cov_diag)?,
            tolerance: c.f64_or("tolerance", d.tolerance)?,
            radius: optional("radius")?,
            localization_t: c.f64_or("localization_t", d.localization_t)?,
            c_tail: optional("c_tail")?,
            c_loc_points: c.usize_or("c_loc_points", d.c_loc_points)?,
            c_loc_quantile: c.f64_or("c_loc_quantile", d.c_loc_quantile)?,
            c_loc_safety: c.f64_or("c_loc_safety", d.c_loc_safety)?,
            samples: c.usize_or("samples", d.samples)?,
            thresholds: GateThresholds {
                s_c_max: c.f64_or("s_c_max", d.thresholds.s_c_max)?,
                s_delta_max: c.f64_or("s_delta_max", d.thresholds.s_delta_max)?,
            },
            seed: c.u64_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.cov_diag.len() {
            return Err(Error::Config("mean and cov_diag must have equal length".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.samples < 1000 || self.c_loc_points < 50 {
            return Err(Error::Config("samples >= 1000 and c_loc_points >= 50 are required".into()));
        }
        if self.c_tail.is_some_and(|c| !(c >= 0.0)) {
            return Err(Error::Config("c_tail must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutput {
    pub config_hash: String,
    pub bound: MargBoundReport,
    pub decision: GateDecision,
}

pub fn evaluate_gate(cfg: &GateConfig) -> Result<GateOutput> {
    cfg.validate()?;
    let m = cfg.manifold.build()?;
    let g = Gaussian::new(
        DVector::from_column_slice(&cfg.mean),
        DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.cov_diag)),
    )?;
    let base = m.project(g.mean())?;
    let frame = m.tangent_frame(&base)?;
    let reach = m.reach();
    let r = match cfg.radius {
        Some(r) => r,
        None => g.localization_radius(&base, cfg.localization_t)?.min(0.49 * reach),
    };
    let kappa = m.curvature_bound(&base, r)?;
    let kappa_r = m.retraction_constant(&frame, r)?;
    let c_loc = calibrate_c_loc(
        &m,
        &frame,
        r,
        kappa,
        kappa_r,
        cfg.c_loc_points,
        cfg.c_loc_quantile,
        cfg.c_loc_safety,
        derive_seed(cfg.seed, 1),
    )?;
    let c_tail = match cfg.c_tail {
        Some(c) => c,
        None => {
            let spec = PushforwardSpec::new(m.clone(), g.clone(), r, cfg.samples, derive_seed(cfg.seed, 2))?;
            let coupled = coupled_marginal_samples(&spec)?;
            c_tail_moment(&coupled.exact_measure(), &coupled.surrogate_measure(), &base)?
        }
    };
    let constants = MargConstants {
        kappa,
        kappa_r,
        c_loc: Some(c_loc),
        c_tail: Some(c_tail),
    };
    let bound = marg_bound(&g, &m, &frame, r, &constants, TailMode::Analytic, cfg.samples, derive_seed(cfg.seed, 3))?;
    let indicators = GateIndicators::new(kappa, g.lambda_max(), g.offset_to(&base)?.norm(), reach);
    let decision = runtime_gate(BoundSummary::from(&bound), indicators, cfg.tolerance, &cfg.thresholds);
    Ok(GateOutput {
        config_hash: config_hash(cfg)?,
        bound,
        decision,
    })
}

pub fn gate_table(out: &GateOutput, seed: u64) -> Result<Table> {
    let mut t = Table::new(&[
        "r",
        "local_term",
        "tail_term",
        "bound",
        "tolerance",
        "s_c",
        "s_delta",
        "verdict",
        "seed",
        "config_hash",
    ]);
    let d = &out.decision;
    t.push(vec![
        out.bound.r.into(),
        out.bound.local_term.into(),
        out.bound.tail_term.into(),
        out.bound.total.into(),
        d.tolerance.into(),
        d.s_c.into(),
        d.s_delta.into(),
        crate::circle::verdict_name(d.verdict).into(),
        seed.into(),
        out.config_hash.clone().into(),
    ])?;
    Ok(t)
}
