//! Circle benchmark: calibration of the tangent-linearized angle law against
//! the exact projected law, W2 proxies with the marginalization bound, an
//! anisotropy and offset stress, and a conditioning demo.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::affine::{condition_tangent_coords, AffineManifold};
use crate::bounds::{
    c_tail_calibrated, c_tail_moment, calibrate_c_loc, cond_bound, eta_r, marg_bound, runtime_gate, BoundSummary,
    CondBoundReport, CondTails, GateIndicators, GateThresholds, MargBoundReport, MargConstants, TailCalibrationPoint,
    TailMode, TailSource, Verdict,
};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::io::{config_hash, Cell, FlatConfig, Table};
use crate::manifold::ManifoldModel;
use crate::pushforward::{
    coupled_marginal_samples, exact_conditional_samples, surrogate_conditional_samples, PushforwardSpec,
};
use crate::rng::derive_seed;
use crate::wasserstein::{unwrap_angles, w2_assignment, w2_coupled_upper};

/// Nominal two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;
/// Mass beyond `|theta| > 0.95 pi` above which a row is flagged.
pub const ANTIPODAL_LIMIT: f64 = 0.01;
const ANTIPODAL_MARGIN: f64 = 0.95 * PI;

const TAG_BASELINE: u64 = 11;
const TAG_OFFSET: u64 = 12;
const TAG_COND: u64 = 13;
const TAG_CLOC: u64 = 21;
const TAG_M4: u64 = 22;

/// How W2 values and bounds are scaled before reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide distances by the circle radius.
    Radius,
    None,
}

/// Sweep configuration; every field maps to a flat config key of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_points: usize,
    /// Radial offset of the ambient mean beyond the circle.
    pub delta: f64,
    pub etas: Vec<f64>,
    pub offset_max: f64,
    pub offset_step: f64,
    pub offset_sigma: f64,
    pub samples: usize,
    pub assignment_samples: usize,
    pub cond_assignment_samples: usize,
    pub cond_sigmas: Vec<f64>,
    pub cond_deltas: Vec<f64>,
    pub c_loc_points: usize,
    pub c_loc_quantile: f64,
    pub c_loc_safety: f64,
    pub fourth_moment_budget: usize,
    /// Deviation multiplier of the localization radius.
    pub localization_t: f64,
    /// Chart radius cap as a fraction of the circle radius.
    pub radius_cap: f64,
    pub quadrature_points: usize,
    pub normalization: Normalization,
    /// Gate tolerance as a multiple of the bound at `gate_reference_sigma`.
    pub gate_tolerance_factor: f64,
    pub gate_reference_sigma: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.5, 1.0, 2.0],
            sigma_min: 0.02,
            sigma_max: 1.2,
            sigma_points: 25,
            delta: 0.2,
            etas: vec![0.5, 1.0, 2.0, 4.0],
            offset_max: 0.4,
            offset_step: 0.05,
            offset_sigma: 0.05,
            samples: 100_000,
            assignment_samples: 1024,
            cond_assignment_samples: 2048,
            cond_sigmas: vec![0.02, 0.05, 0.1, 0.2],
            cond_deltas: vec![0.0, 0.2],
            c_loc_points: 2000,
            c_loc_quantile: 0.9,
            c_loc_safety: 1.5,
            fourth_moment_budget: 20_000,
            localization_t: 3.0,
            radius_cap: 0.49,
            quadrature_points: 1 << 17,
            normalization: Normalization::Radius,
            gate_tolerance_factor: 2.0,
            gate_reference_sigma: 0.05,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "radii",
    "sigma_min",
    "sigma_max",
    "sigma_points",
    "delta",
    "etas",
    "offset_max",
    "offset_step",
    "offset_sigma",
    "samples",
    "assignment_samples",
    "cond_assignment_samples",
    "cond_sigmas",
    "cond_deltas",
    "c_loc_points",
    "c_loc_quantile",
    "c_loc_safety",
    "fourth_moment_budget",
    "localization_t",
    "radius_cap",
    "quadrature_points",
    "normalization",
    "gate_tolerance_factor",
    "gate_reference_sigma",
    "seed",
];

impl SweepConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        c.check_known(CONFIG_KEYS)?;
        let d = Self::default();
        let normalization = match c.str_or("normalization", "radius")?.as_str() {
            "radius" => Normalization::Radius,
            "none" => Normalization::None,
            other => return Err(Error::Config(format!("unknown normalization `{other}`"))),
        };
        let cfg = Self {
            radii: c.f64_list_or("radii", &d.radii)?,
            sigma_min: c.f64_or("sigma_min", d.sigma_min)?,
            sigma_max: c.f64_or("sigma_max", d.sigma_max)?,
            sigma_points: c.usize_or("sigma_points", d.sigma_points)?,
            delta: c.f64_or("delta", d.delta)?,
            etas: c.f64_list_or("etas", &d.etas)?,
            offset_max: c.f64_or("offset_max", d.offset_max)?,
            offset_step: c.f64_or("offset_step", d.offset_step)?,
            offset_sigma: c.f64_or("offset_sigma", d.offset_sigma)?,
            samples: c.usize_or("samples", d.samples)?,
            assignment_samples: c.usize_or("assignment_samples", d.assignment_samples)?,
            cond_assignment_samples: c.usize_or("cond_assignment_samples", d.cond_assignment_samples)?,
            cond_sigmas: c.f64_list_or("cond_sigmas", &d.cond_sigmas)?,
            cond_deltas: c.f64_list_or("cond_deltas", &d.cond_deltas)?,
            c_loc_points: c.usize_or("c_loc_points", d.c_loc_points)?,
            c_loc_quantile: c.f64_or("c_loc_quantile", d.c_loc_quantile)?,
            c_loc_safety: c.f64_or("c_loc_safety", d.c_loc_safety)?,
            fourth_moment_budget: c.usize_or("fourth_moment_budget", d.fourth_moment_budget)?,
            localization_t: c.f64_or("localization_t", d.localization_t)?,
            radius_cap: c.f64_or("radius_cap", d.radius_cap)?,
            quadrature_points: c.usize_or("quadrature_points", d.quadrature_points)?,
            normalization,
            gate_tolerance_factor: c.f64_or("gate_tolerance_factor", d.gate_tolerance_factor)?,
            gate_reference_sigma: c.f64_or("gate_reference_sigma", d.gate_reference_sigma)?,
            seed: c.u64_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() || !v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("`{name}` must be a nonempty list of positive numbers")));
            }
            Ok(())
        };
        positive("radii", &self.radii)?;
        positive("etas", &self.etas)?;
        positive("cond_sigmas", &self.cond_sigmas)?;
        if self.cond_deltas.is_empty() || self.cond_deltas.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("`cond_deltas` must be a nonempty list of nonnegative numbers".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_points >= 2) {
            return Err(Error::Config("sigma grid needs 0 < sigma_min < sigma_max and at least two points".into()));
        }
        if !(self.delta >= 0.0 && self.offset_max >= 0.0 && self.offset_step > 0.0 && self.offset_sigma > 0.0) {
            return Err(Error::Config("offsets must be nonnegative and steps positive".into()));
        }
        if self.samples < 1000 || self.fourth_moment_budget < 1000 {
            return Err(Error::Config("sample budgets must be at least 1000".into()));
        }
        if self.assignment_samples < 2
            || self.assignment_samples > self.samples
            || self.cond_assignment_samples < 2
            || self.cond_assignment_samples > self.samples
        {
            return Err(Error::Config("assignment subsamples must lie in [2, samples]".into()));
        }
        if !(self.radius_cap > 0.0 && self.radius_cap < 0.5) {
            return Err(Error::Config("radius_cap must lie in (0, 0.5)".into()));
        }
        if self.quadrature_points < 1000 || self.c_loc_points < 50 {
            return Err(Error::Config("quadrature_points >= 1000 and c_loc_points >= 50 are required".into()));
        }
        if !(self.c_loc_quantile > 0.0 && self.c_loc_quantile <= 1.0 && self.c_loc_safety > 0.0) {
            return Err(Error::Config("C_loc quantile must lie in (0, 1] and safety be positive".into()));
        }
        if !(self.localization_t >= 0.0 && self.gate_tolerance_factor > 0.0 && self.gate_reference_sigma > 0.0) {
            return Err(Error::Config("gate and localization parameters must be positive".into()));
        }
        Ok(())
    }

    /// Log-spaced `sigma / R` grid.
    pub fn sigma_grid(&self) -> Vec<f64> {
        log_grid(self.sigma_min, self.sigma_max, self.sigma_points)
    }

    /// `delta / R` grid `0, step, ..., max`.
    pub fn offset_grid(&self) -> Vec<f64> {
        let n = (self.offset_max / self.offset_step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.offset_step).collect()
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    fn scale(&self, radius: f64) -> f64 {
        match self.normalization {
            Normalization::Radius => radius,
            Normalization::None => 1.0,
        }
    }

    fn chart_radius(&self, g: &Gaussian, base: &DVector<f64>, radius: f64) -> Result<f64> {
        Ok(g.localization_radius(base, self.localization_t)?.min(self.radius_cap * radius))
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Seed of grid cell `(i, j)` under tag `tag`.
pub fn row_seed(seed: u64, tag: u64, i: usize, j: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, tag), i as u64), j as u64)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `ln(phi(z) + z Phi(z))`, with an asymptotic series in the far left tail.
fn ln_h(z: f64) -> f64 {
    if z < -8.0 {
        let z2 = z * z;
        let series = 1.0 - 3.0 / z2 + 15.0 / (z2 * z2) - 105.0 / (z2 * z2 * z2) + 945.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - 0.5 * (2.0 * PI).ln() - z2.ln() + series.ln()
    } else {
        (std_normal_pdf(z) + z * std_normal_cdf(z)).ln()
    }
}

/// Mean and variance of `clamp(v, -r, r)` for `v ~ N(m, s^2)`.
pub fn clamped_normal_moments(m: f64, s: f64, r: f64) -> (f64, f64) {
    if s == 0.0 {
        let c = m.clamp(-r, r);
        return (c, 0.0);
    }
    let a = (-r - m) / s;
    let b = (r - m) / s;
    let (fa, fb) = (std_normal_cdf(a), std_normal_cdf(b));
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let mass = fb - fa;
    let lower = fa;
    let upper = 1.0 - fb;
    let m1 = m * mass + s * (pa - pb) - r * lower + r * upper;
    let m2 = (m * m + s * s) * mass + 2.0 * m * s * (pa - pb) + s * s * (a * pa - b * pb) + r * r * (lower + upper);
    (m1, (m2 - m1 * m1).max(0.0))
}

/// Angle law of the projection of `N(mean, cov)` onto a circle about
/// `center`, tabulated on a midpoint grid of `(-pi, pi]` relative to
/// `reference`.
#[derive(Debug, Clone)]
pub struct AngularLaw {
    pub angles: Vec<f64>,
    /// Cell masses, summing to one.
    pub masses: Vec<f64>,
    pub step: f64,
}

impl AngularLaw {
    pub fn projected_normal(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        center: &DVector<f64>,
        reference: f64,
        points: usize,
    ) -> Result<Self> {
        let g = Gaussian::new(mean.clone(), cov.clone())?;
        let omega = g.precision()?;
        let mu = mean - center;
        let c = (mu.transpose() * &omega * &mu)[(0, 0)];
        let step = 2.0 * PI / points as f64;
        let angles: Vec<f64> = (0..points).map(|i| -PI + (i as f64 + 0.5) * step).collect();
        let logs: Vec<f64> = angles
            .par_iter()
            .map(|t| {
                let u = DVector::from_vec(vec![(reference + t).cos(), (reference + t).sin()]);
                let a = (u.transpose() * &omega * &u)[(0, 0)];
                let b = (u.transpose() * &omega * &mu)[(0, 0)];
                let z = b / a.sqrt();
                // constants common to all angles are dropped
                -a.ln() - 0.5 * (c - z * z) + ln_h(z) + 0.5 * (2.0 * PI).ln()
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            angles,
            masses: raw.iter().map(|m| m / total).collect(),
            step,
        })
    }

    pub fn mean(&self) -> f64 {
        self.angles.iter().zip(&self.masses).map(|(t, m)| t * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.angles.iter().zip(&self.masses).map(|(t, m)| (t - mu).powi(2) * m).sum()
    }

    /// `P(|theta| <= h)`, interpolating the CDF linearly inside cells.
    pub fn central_mass(&self, h: f64) -> f64 {
        self.cdf(h) - self.cdf(-h)
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= -PI {
            return 0.0;
        }
        if x >= PI {
            return 1.0;
        }
        let pos = (x + PI) / self.step;
        let i = (pos.floor() as usize).min(self.masses.len() - 1);
        let before: f64 = self.masses[..i].iter().sum();
        before + self.masses[i] * (pos - i as f64)
    }

    pub fn tail_mass(&self, margin: f64) -> f64 {
        self.angles
            .iter()
            .zip(&self.masses)
            .filter(|(t, _)| t.abs() > margin)
            .map(|(_, m)| m)
            .sum()
    }
}

/// Angular calibration of one `(mean, cov)` on a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularCalibration {
    pub r: f64,
    pub var_lin: f64,
    pub var_exact: f64,
    /// `var_lin / var_exact`.
    pub rho: f64,
    pub coverage: f64,
    pub antipodal_mass: f64,
    pub flagged: bool,
}

/// Linearized versus exact angle law of `N(mean, cov)` projected onto the
/// circle of radius `radius` about the origin. The linearized angle is
/// `clamp(v, r) / R` with `v` the tangent coordinate at the projected mean.
pub fn angular_calibration(cfg: &SweepConfig, radius: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<AngularCalibration> {
    let m = ManifoldModel::circle(radius)?;
    let g = Gaussian::new(mean.clone(), cov.clone())?;
    let base = m.project(mean)?;
    let frame = m.tangent_frame(&base)?;
    let r = cfg.chart_radius(&g, &base, radius)?;
    let t = frame.tangent.column(0).into_owned();
    let mt = t.dot(&(mean - &base));
    let st = (t.transpose() * cov * &t)[(0, 0)].sqrt();
    let (_, var_v) = clamped_normal_moments(mt, st, r);
    let var_lin = var_v / (radius * radius);
    let reference = base[1].atan2(base[0]);
    let law = AngularLaw::projected_normal(mean, cov, &DVector::zeros(2), reference, cfg.quadrature_points)?;
    let var_exact = law.variance();
    let coverage = law.central_mass(Z_95 * var_lin.sqrt());
    let antipodal_mass = law.tail_mass(ANTIPODAL_MARGIN);
    Ok(AngularCalibration {
        r,
        var_lin,
        var_exact,
        rho: var_lin / var_exact,
        coverage,
        antipodal_mass,
        flagged: antipodal_mass > ANTIPODAL_LIMIT,
    })
}

/// `sigma / R` at which `values` first drops from `>= level` to `< level`,
/// by linear interpolation in `log(sigma / R)`; rows with `skip` set are
/// ignored.
pub fn crossing(xs: &[f64], values: &[f64], skip: &[bool], level: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(values)
        .zip(skip)
        .filter(|(_, s)| !**s)
        .map(|((x, v), _)| (*x, *v))
        .collect();
    pts.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 >= level && y1 < level {
            let t = (y0 - level) / (y0 - y1);
            Some((x0.ln() + t * (x1.ln() - x0.ln())).exp())
        } else {
            None
        }
    })
}

/// One `(R, sigma)` point of the baseline sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius: f64,
    pub sigma_over_r: f64,
    pub delta: f64,
    pub seed: u64,
    pub angular: AngularCalibration,
    pub var_exact_mc: f64,
    pub mc_rel_diff: f64,
    pub w2_coupled: f64,
    pub w2_coupled_se: f64,
    pub w2_assignment: f64,
    /// Larger of the two proxies.
    pub w2_proxy: f64,
    pub local_term: f64,
    pub c_tail_moment: f64,
    pub c_tail: f64,
    pub bound: f64,
    pub envelope_ok: bool,
    pub report: MargBoundReport,
    pub s_c: f64,
    pub s_delta: f64,
    pub verdict: Verdict,
}

/// Per-radius aggregates of the baseline sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub radius: f64,
    pub crossing: Option<f64>,
    pub c_tail_prefit: f64,
    pub c_tail: f64,
    pub gate_tolerance: f64,
    pub envelope_fraction: f64,
    pub flagged_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<RadiusSummary>,
}

impl SweepOutput {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.angular.flagged).count()
    }
}

struct RowCore {
    angular: AngularCalibration,
    var_exact_mc: f64,
    w2_coupled: f64,
    w2_coupled_se: f64,
    w2_assignment: f64,
    c_tail_moment: f64,
    report: MargBoundReport,
}

fn isotropic_cov(sigma: f64) -> DMatrix<f64> {
    DMatrix::identity(2, 2) * (sigma * sigma)
}

fn evaluate_row(cfg: &SweepConfig, radius: f64, mean: &DVector<f64>, cov: &DMatrix<f64>, seed: u64) -> Result<RowCore> {
    let angular = angular_calibration(cfg, radius, mean, cov)?;
    let m = ManifoldModel::circle(radius)?;
    let g = Gaussian::new(mean.clone(), cov.clone())?;
    let spec = PushforwardSpec::new(m.clone(), g.clone(), angular.r, cfg.samples, seed)?;
    let frame = spec.frame.clone();
    let coupled = coupled_marginal_samples(&spec)?;
    let reference = frame.base[1].atan2(frame.base[0]);
    let angles = unwrap_angles(&coupled.exact, &DVector::zeros(2), reference);
    let mean_a = angles.iter().sum::<f64>() / angles.len() as f64;
    let var_exact_mc = angles.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / (angles.len() - 1) as f64;
    let cw = w2_coupled_upper(&coupled.exact, &coupled.surrogate)?;
    let exact = coupled.exact_measure();
    let sur = coupled.surrogate_measure();
    let aw = w2_assignment(&exact.head(cfg.assignment_samples)?, &sur.head(cfg.assignment_samples)?)?;
    let c_tail_moment = c_tail_moment(&exact, &sur, &frame.base)?;
    let kappa = 1.0 / radius;
    let kappa_r = m.retraction_constant(&frame, angular.r)?;
    let c_loc = calibrate_c_loc(
        &m,
        &frame,
        angular.r,
        kappa,
        kappa_r,
        cfg.c_loc_points,
        cfg.c_loc_quantile,
        cfg.c_loc_safety,
        derive_seed(seed, TAG_CLOC),
    )?;
    let constants = MargConstants {
        kappa,
        kappa_r,
        c_loc: Some(c_loc),
        c_tail: Some(0.0),
    };
    let report = marg_bound(
        &g,
        &m,
        &frame,
        angular.r,
        &constants,
        TailMode::Analytic,
        cfg.fourth_moment_budget,
        derive_seed(seed, TAG_M4),
    )?;
    Ok(RowCore {
        angular,
        var_exact_mc,
        w2_coupled: cw.value,
        w2_coupled_se: cw.std_error.unwrap_or(0.0),
        w2_assignment: aw.value,
        c_tail_moment,
        report,
    })
}

/// Baseline sweep over radii and `sigma / R` with the mean offset radially
/// by `delta`.
pub fn circle_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let grid = cfg.sigma_grid();
    let cells: Vec<(usize, usize)> = (0..cfg.radii.len())
        .flat_map(|i| (0..grid.len()).map(move |j| (i, j)))
        .collect();
    let cores: Vec<RowCore> = cells
        .par_iter()
        .map(|&(i, j)| {
            let radius = cfg.radii[i];
            let mean = DVector::from_vec(vec![radius + cfg.delta, 0.0]);
            let cov = isotropic_cov(grid[j] * radius);
            evaluate_row(cfg, radius, &mean, &cov, row_seed(cfg.seed, TAG_BASELINE, i, j))
        })
        .collect::<Result<_>>()?;

    let thresholds = GateThresholds::default();
    let mut rows = Vec::with_capacity(cells.len());
    let mut summaries = Vec::new();
    for (i, &radius) in cfg.radii.iter().enumerate() {
        let scale = cfg.scale(radius);
        let idx: Vec<usize> = (0..cells.len()).filter(|k| cells[*k].0 == i).collect();
        let points: Vec<TailCalibrationPoint> = idx
            .iter()
            .map(|&k| {
                let c = &cores[k];
                TailCalibrationPoint {
                    proxy: c.w2_coupled.max(c.w2_assignment) / scale,
                    local_term: c.report.local_term / scale,
                    epsilon: c.report.epsilon,
                }
            })
            .collect();
        let cal = c_tail_calibrated(&points)?;
        let mut block: Vec<SweepRow> = idx
            .iter()
            .map(|&k| {
                let (_, j) = cells[k];
                let c = &cores[k];
                let mut report = c.report;
                report.c_tail = cal.value * scale;
                report.tail_term = report.c_tail * report.epsilon.powf(0.25);
                report.total = report.local_term + report.tail_term;
                let proxy = c.w2_coupled.max(c.w2_assignment) / scale;
                let bound = report.total / scale;
                let sigma = grid[j] * radius;
                SweepRow {
                    radius,
                    sigma_over_r: grid[j],
                    delta: cfg.delta,
                    seed: row_seed(cfg.seed, TAG_BASELINE, i, j),
                    angular: c.angular,
                    var_exact_mc: c.var_exact_mc,
                    mc_rel_diff: c.var_exact_mc / c.angular.var_exact - 1.0,
                    w2_coupled: c.w2_coupled / scale,
                    w2_coupled_se: c.w2_coupled_se / scale,
                    w2_assignment: c.w2_assignment / scale,
                    w2_proxy: proxy,
                    local_term: c.report.local_term / scale,
                    c_tail_moment: c.c_tail_moment / scale,
                    c_tail: cal.value,
                    bound,
                    envelope_ok: bound >= proxy,
                    report,
                    s_c: GateIndicators::new(1.0 / radius, sigma * sigma, cfg.delta, radius).s_c,
                    s_delta: GateIndicators::new(1.0 / radius, sigma * sigma, cfg.delta, radius).s_delta,
                    verdict: Verdict::SingleChart,
                }
            })
            .collect();
        let reference = block
            .iter()
            .min_by(|a, b| {
                let da = (a.sigma_over_r.ln() - cfg.gate_reference_sigma.ln()).abs();
                let db = (b.sigma_over_r.ln() - cfg.gate_reference_sigma.ln()).abs();
                da.total_cmp(&db)
            })
            .map(|r| r.bound)
            .unwrap_or(0.0);
        let tolerance = cfg.gate_tolerance_factor * reference;
        for row in block.iter_mut() {
            let summary = BoundSummary {
                total: row.bound,
                local: row.local_term,
                tail: row.report.tail_term / scale,
            };
            let ind = GateIndicators {
                s_c: row.s_c,
                s_delta: row.s_delta,
            };
            row.verdict = runtime_gate(summary, ind, tolerance, &thresholds).verdict;
        }
        let xs: Vec<f64> = block.iter().map(|r| r.sigma_over_r).collect();
        let ys: Vec<f64> = block.iter().map(|r| r.angular.rho).collect();
        let skip: Vec<bool> = block.iter().map(|r| r.angular.flagged).collect();
        summaries.push(RadiusSummary {
            radius,
            crossing: crossing(&xs, &ys, &skip, 1.0),
            c_tail_prefit: cal.prefit,
            c_tail: cal.value,
            gate_tolerance: tolerance,
            envelope_fraction: block.iter().filter(|r| r.envelope_ok).count() as f64 / block.len() as f64,
            flagged_rows: skip.iter().filter(|s| **s).count(),
        });
        rows.extend(block);
    }
    Ok(SweepOutput {
        config_hash: hash,
        rows,
        summaries,
    })
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "radius",
    "sigma_over_r",
    "delta",
    "r",
    "var_lin",
    "var_exact",
    "var_exact_mc",
    "mc_rel_diff",
    "rho",
    "coverage",
    "antipodal_mass",
    "flagged",
    "w2_coupled",
    "w2_coupled_se",
    "w2_assignment",
    "w2_proxy",
    "c_loc",
    "localized_fourth_moment",
    "local_term",
    "epsilon",
    "c_tail_moment",
    "c_tail",
    "bound",
    "envelope_ok",
    "s_c",
    "s_delta",
    "verdict",
    "seed",
    "config_hash",
];

pub fn sweep_table(out: &SweepOutput) -> Result<Table> {
    let mut t = Table::new(SWEEP_COLUMNS);
    for r in &out.rows {
        t.push(vec![
            r.radius.into(),
            r.sigma_over_r.into(),
            r.delta.into(),
            r.angular.r.into(),
            r.angular.var_lin.into(),
            r.angular.var_exact.into(),
            r.var_exact_mc.into(),
            r.mc_rel_diff.into(),
            r.angular.rho.into(),
            r.angular.coverage.into(),
            r.angular.antipodal_mass.into(),
            r.angular.flagged.into(),
            r.w2_coupled.into(),
            r.w2_coupled_se.into(),
            r.w2_assignment.into(),
            r.w2_proxy.into(),
            r.report.c_loc.into(),
            r.report.localized_fourth_moment.into(),
            r.local_term.into(),
            r.report.epsilon.into(),
            r.c_tail_moment.into(),
            r.c_tail.into(),
            r.bound.into(),
            r.envelope_ok.into(),
            r.s_c.into(),
            r.s_delta.into(),
            Cell::S(verdict_name(r.verdict).into()),
            r.seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::SingleChart => "single-chart",
        Verdict::Relinearize => "relinearize",
        Verdict::MultiChart => "multi-chart",
        Verdict::SampleBased => "sample-based",
    }
}

/// Anisotropic row keyed by `sqrt(||Sigma||_op) / R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyRow {
    pub eta: f64,
    pub radius: f64,
    pub sqrt_op_over_r: f64,
    pub sigma_n: f64,
    pub sigma_t: f64,
    pub seed: u64,
    pub angular: AngularCalibration,
}

/// Offset row at fixed `sigma / R` and chart radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetRow {
    pub radius: f64,
    pub delta_over_r: f64,
    pub sigma_over_r: f64,
    pub r: f64,
    pub epsilon_analytic: f64,
    pub epsilon_empirical: f64,
    pub coverage: f64,
    pub rho: f64,
    pub flagged: bool,
    pub seed: u64,
}

/// Crossing locations across anisotropy ratios for one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub radius: f64,
    pub crossings: Vec<(f64, Option<f64>)>,
    /// Spread of the crossings in units of the log-grid step.
    pub spread_in_steps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressOutput {
    pub config_hash: String,
    pub anisotropy: Vec<AnisotropyRow>,
    pub offsets: Vec<OffsetRow>,
    pub alignment: Vec<AlignmentSummary>,
}

impl StressOutput {
    pub fn flagged(&self) -> usize {
        self.anisotropy.iter().filter(|r| r.angular.flagged).count() + self.offsets.iter().filter(|r| r.flagged).count()
    }
}

/// Anisotropy sweep with `Sigma = diag(sigma_n^2, sigma_t^2)` in the
/// normal/tangent frame and `eta = sigma_n / sigma_t`, plus the offset table.
pub fn circle_stress(cfg: &SweepConfig) -> Result<StressOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let grid = cfg.sigma_grid();
    let step = (grid[1] / grid[0]).ln();
    let mut anisotropy = Vec::new();
    let mut alignment = Vec::new();
    for (i, &radius) in cfg.radii.iter().enumerate() {
        let mut crossings = Vec::new();
        for &eta in &cfg.etas {
            let block: Vec<AnisotropyRow> = grid
                .par_iter()
                .enumerate()
                .map(|(j, &g)| {
                    let top = g * radius;
                    let (sn, st) = if eta >= 1.0 { (top, top / eta) } else { (top * eta, top) };
                    let mean = DVector::from_vec(vec![radius + cfg.delta, 0.0]);
                    // the normal at (R, 0) is the x axis
                    let cov = if sn == st {
                        isotropic_cov(sn)
                    } else {
                        DMatrix::from_diagonal(&DVector::from_vec(vec![sn * sn, st * st]))
                    };
                    Ok(AnisotropyRow {
                        eta,
                        radius,
                        sqrt_op_over_r: g,
                        sigma_n: sn,
                        sigma_t: st,
                        seed: row_seed(cfg.seed, TAG_BASELINE, i, j),
                        angular: angular_calibration(cfg, radius, &mean, &cov)?,
                    })
                })
                .collect::<Result<_>>()?;
            let xs: Vec<f64> = block.iter().map(|r| r.sqrt_op_over_r).collect();
            let ys: Vec<f64> = block.iter().map(|r| r.angular.rho).collect();
            let skip: Vec<bool> = block.iter().map(|r| r.angular.flagged).collect();
            crossings.push((eta, crossing(&xs, &ys, &skip, 1.0)));
            anisotropy.extend(block);
        }
        let found: Vec<f64> = crossings.iter().filter_map(|c| c.1).collect();
        let spread_in_steps = if found.len() == crossings.len() && !found.is_empty() {
            let lo = found.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = found.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some((hi / lo).ln() / step)
        } else {
            None
        };
        alignment.push(AlignmentSummary {
            radius,
            crossings,
            spread_in_steps,
        });
    }

    let offsets_grid = cfg.offset_grid();
    let mut offsets = Vec::new();
    for (i, &radius) in cfg.radii.iter().enumerate() {
        let block: Vec<OffsetRow> = offsets_grid
            .iter()
            .enumerate()
            .map(|(j, &d)| {
                let sigma = cfg.offset_sigma * radius;
                let mean = DVector::from_vec(vec![radius + d * radius, 0.0]);
                let cov = isotropic_cov(sigma);
                let g = Gaussian::new(mean.clone(), cov.clone())?;
                let base = DVector::from_vec(vec![radius, 0.0]);
                let r = cfg.radius_cap * radius;
                let seed = row_seed(cfg.seed, TAG_OFFSET, i, j);
                let draws = g.sample_points(cfg.samples, seed);
                let outside = draws.iter().filter(|x| (*x - &base).norm() > r).count();
                let ang = angular_calibration(cfg, radius, &mean, &cov)?;
                Ok(OffsetRow {
                    radius,
                    delta_over_r: d,
                    sigma_over_r: cfg.offset_sigma,
                    r,
                    epsilon_analytic: g.tail_prob_bound(&base, r)?,
                    epsilon_empirical: outside as f64 / cfg.samples as f64,
                    coverage: ang.coverage,
                    rho: ang.rho,
                    flagged: ang.flagged,
                    seed,
                })
            })
            .collect::<Result<_>>()?;
        offsets.extend(block);
    }
    Ok(StressOutput {
        config_hash: hash,
        anisotropy,
        offsets,
        alignment,
    })
}

pub fn anisotropy_table(out: &StressOutput) -> Result<Table> {
    let mut t = Table::new(&[
        "eta",
        "radius",
        "sqrt_op_over_r",
        "sigma_n",
        "sigma_t",
        "r",
        "var_lin",
        "var_exact",
        "rho",
        "coverage",
        "antipodal_mass",
        "flagged",
        "seed",
        "config_hash",
    ]);
    for r in &out.anisotropy {
        t.push(vec![
            r.eta.into(),
            r.radius.into(),
            r.sqrt_op_over_r.into(),
            r.sigma_n.into(),
            r.sigma_t.into(),
            r.angular.r.into(),
            r.angular.var_lin.into(),
            r.angular.var_exact.into(),
            r.angular.rho.into(),
            r.angular.coverage.into(),
            r.angular.antipodal_mass.into(),
            r.angular.flagged.into(),
            r.seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}

pub fn offset_table(out: &StressOutput) -> Result<Table> {
    let mut t = Table::new(&[
        "radius",
        "delta_over_r",
        "sigma_over_r",
        "r",
        "epsilon_analytic",
        "epsilon_empirical",
        "coverage",
        "rho",
        "flagged",
        "seed",
        "config_hash",
    ]);
    for r in &out.offsets {
        t.push(vec![
            r.radius.into(),
            r.delta_over_r.into(),
            r.sigma_over_r.into(),
            r.r.into(),
            r.epsilon_analytic.into(),
            r.epsilon_empirical.into(),
            r.coverage.into(),
            r.rho.into(),
            r.flagged.into(),
            r.seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}

/// One conditioning-demo row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondRow {
    /// `"circle"` or `"affine"`.
    pub manifold: String,
    pub radius: f64,
    pub sigma_over_r: f64,
    pub delta: f64,
    pub seed: u64,
    pub r: f64,
    pub ess: f64,
    pub w2_assignment: f64,
    pub tv: f64,
    pub tanh_eta: f64,
    pub tv_ok: bool,
    pub envelope_ok: bool,
    /// Set when the exact sampler failed; the report is then absent.
    pub error: Option<String>,
    pub report: Option<CondBoundReport>,
}

impl CondRow {
    pub fn flagged(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondOutput {
    pub config_hash: String,
    pub rows: Vec<CondRow>,
}

impl CondOutput {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged()).count()
    }
}

const TV_GRID: usize = 4001;

/// TV between the chart-restricted exact conditional and the restricted
/// tangent law, on a midpoint grid of `[-r, r]` (one tangent dimension).
fn restricted_tv(spec: &PushforwardSpec, r: f64) -> Result<f64> {
    let q = condition_tangent_coords(&spec.ambient, &spec.frame)?;
    if q.dim() != 1 {
        return Err(Error::InvalidArgument("grid TV is implemented for curves".into()));
    }
    let h = 2.0 * r / TV_GRID as f64;
    let (mut lp, mut lq) = (Vec::with_capacity(TV_GRID), Vec::with_capacity(TV_GRID));
    for i in 0..TV_GRID {
        let v = DVector::from_element(1, -r + (i as f64 + 0.5) * h);
        let (y, j) = match &spec.manifold {
            ManifoldModel::Affine(_) => (spec.frame.lift(&v), 1.0),
            m => m.chart(&spec.frame, &v, spec.chart)?,
        };
        lp.push(spec.ambient.log_density(&y)? + j.ln());
        lq.push(q.log_density(&v)?);
    }
    let normalize = |l: &[f64]| -> Vec<f64> {
        let top = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = l.iter().map(|x| (x - top).exp()).collect();
        let mass: f64 = raw.iter().sum::<f64>() * h;
        raw.iter().map(|x| x / mass).collect()
    };
    crate::wasserstein::tv_on_grid(&normalize(&lp), &normalize(&lq), h)
}

fn cond_row(
    cfg: &SweepConfig,
    manifold: ManifoldModel,
    label: &str,
    radius: f64,
    sigma_over_r: f64,
    delta: f64,
    mean: DVector<f64>,
    sigma: f64,
    r: f64,
    seed: u64,
) -> Result<CondRow> {
    let g = Gaussian::isotropic(mean, sigma)?;
    let spec = PushforwardSpec::new(manifold.clone(), g.clone(), r, cfg.samples, seed)?;
    let mut row = CondRow {
        manifold: label.to_string(),
        radius,
        sigma_over_r,
        delta,
        seed,
        r,
        ess: f64::NAN,
        w2_assignment: f64::NAN,
        tv: f64::NAN,
        tanh_eta: f64::NAN,
        tv_ok: false,
        envelope_ok: false,
        error: None,
        report: None,
    };
    let exact = match exact_conditional_samples(&spec) {
        Ok(e) => e,
        Err(e @ Error::EffectiveSampleSizeTooLow { .. }) => {
            row.error = Some(e.to_string());
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let sur = surrogate_conditional_samples(&spec)?;
    let n = cfg.cond_assignment_samples.min(exact.measure.len()).min(sur.measure.len());
    let w2 = w2_assignment(&exact.measure.head(n)?, &sur.measure.head(n)?)?.value;
    let chart = manifold.calibrate_chart_constants(&spec.frame, r, 16, spec.chart)?;
    let tails = CondTails {
        tau_p: exact.tau,
        tau_p_hat: sur.tau,
        eps_p: exact.epsilon,
        eps_q: sur.epsilon,
        source: TailSource::Empirical,
    };
    let report = cond_bound(&g, &spec.frame, r, Some(&chart), &tails)?;
    let tv = restricted_tv(&spec, if r.is_finite() { r } else { 10.0 * sigma })?;
    let tanh_eta = eta_r(report.omega_norm, chart.kappa_psi, chart.kappa_j, report.delta_norm, r).tanh();
    row.ess = exact.ess;
    row.w2_assignment = w2;
    row.tv = tv;
    row.tanh_eta = tanh_eta;
    row.tv_ok = tv <= tanh_eta + 1e-9;
    row.envelope_ok = report.total >= w2;
    row.report = Some(report);
    Ok(row)
}

/// Exact surface-measure conditional versus the chart-lifted tangent law
/// over `(R, sigma / R, delta)`, plus an affine sanity row.
pub fn conditioning_demo(cfg: &SweepConfig) -> Result<CondOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let mut cells = Vec::new();
    for (i, &radius) in cfg.radii.iter().enumerate() {
        for (j, &s) in cfg.cond_sigmas.iter().enumerate() {
            for (k, &d) in cfg.cond_deltas.iter().enumerate() {
                cells.push((i, j * cfg.cond_deltas.len() + k, radius, s, d));
            }
        }
    }
    let mut rows: Vec<CondRow> = cells
        .par_iter()
        .map(|&(i, jk, radius, s, d)| {
            let m = ManifoldModel::circle(radius)?;
            let mean = DVector::from_vec(vec![radius + d, 0.0]);
            let sigma = s * radius;
            let g = Gaussian::isotropic(mean.clone(), sigma)?;
            let base = DVector::from_vec(vec![radius, 0.0]);
            let r = cfg.chart_radius(&g, &base, radius)?;
            cond_row(cfg, m, "circle", radius, s, d, mean, sigma, r, row_seed(cfg.seed, TAG_COND, i, jk))
        })
        .collect::<Result<_>>()?;
    // a line in the plane: conditioning is exact, only truncation remains
    let line = ManifoldModel::Affine(AffineManifold::new(
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DVector::from_element(1, 0.0),
    )?);
    let mean = DVector::from_vec(vec![0.3, 0.2]);
    let g = Gaussian::isotropic(mean.clone(), 0.1)?;
    let base = line.project(&mean)?;
    let r = g.localization_radius(&base, cfg.localization_t)?;
    rows.push(cond_row(
        cfg,
        line,
        "affine",
        f64::INFINITY,
        0.0,
        0.2,
        mean,
        0.1,
        r,
        row_seed(cfg.seed, TAG_COND, usize::MAX, 0),
    )?);
    Ok(CondOutput { config_hash: hash, rows })
}

pub fn cond_table(out: &CondOutput) -> Result<Table> {
    let mut t = Table::new(&[
        "manifold",
        "radius",
        "sigma_over_r",
        "delta",
        "r",
        "ess",
        "w2_assignment",
        "bound",
        "interior_term",
        "tail_terms",
        "eta_r",
        "tv",
        "tanh_eta",
        "tv_ok",
        "envelope_ok",
        "flagged",
        "seed",
        "config_hash",
    ]);
    for r in &out.rows {
        let (bound, interior, tails, eta) = r
            .report
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |b| (b.total, b.interior_term, b.tail_terms, b.eta_r));
        t.push(vec![
            r.manifold.clone().into(),
            r.radius.into(),
            r.sigma_over_r.into(),
            r.delta.into(),
            r.r.into(),
            r.ess.into(),
            r.w2_assignment.into(),
            bound.into(),
            interior.into(),
            tails.into(),
            eta.into(),
            r.tv.into(),
            r.tanh_eta.into(),
            r.tv_ok.into(),
            r.envelope_ok.into(),
            r.flagged().into(),
            r.seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig {
            radii: vec![1.0],
            sigma_points: 6,
            samples: 4000,
            assignment_samples: 256,
            cond_assignment_samples: 256,
            c_loc_points: 200,
            fourth_moment_budget: 2000,
            quadrature_points: 1 << 14,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn clamped_moments_match_quadrature() {
        for (m, s, r) in [(0.0, 1.0, 0.5), (0.3, 0.2, 0.25), (-1.0, 2.0, 1.5), (0.0, 0.1, 10.0)] {
            let n = 200_001;
            let lo = m - 12.0 * s;
            let h = 24.0 * s / (n - 1) as f64;
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..n {
                let v: f64 = lo + i as f64 * h;
                let w = std_normal_pdf((v - m) / s) / s * h;
                let c = v.clamp(-r, r);
                a += w * c;
                b += w * c * c;
            }
            let (mm, vv) = clamped_normal_moments(m, s, r);
            assert!((mm - a).abs() < 1e-6, "{m} {s} {r}");
            assert!((vv - (b - a * a)).abs() < 1e-6);
        }
    }

    #[test]
    fn projected_normal_matches_monte_carlo() {
        let mean = DVector::from_vec(vec![1.2, 0.3]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let law = AngularLaw::projected_normal(&mean, &cov, &DVector::zeros(2), 0.0, 1 << 16).unwrap();
        let pts = Gaussian::new(mean, cov).unwrap().sample_points(200_000, 3);
        let ang: Vec<f64> = pts.iter().map(|p| p[1].atan2(p[0])).collect();
        let m = ang.iter().sum::<f64>() / ang.len() as f64;
        let v = ang.iter().map(|a| (a - m).powi(2)).sum::<f64>() / ang.len() as f64;
        assert!((law.mean() - m).abs() < 0.01);
        assert!((law.variance() / v - 1.0).abs() < 0.01);
        let inside = ang.iter().filter(|a| a.abs() <= 0.5).count() as f64 / ang.len() as f64;
        assert!((law.central_mass(0.5) - inside).abs() < 0.005);
    }

    #[test]
    fn centered_small_noise_is_calibrated() {
        let cfg = SweepConfig {
            delta: 0.0,
            ..small()
        };
        let mean = DVector::from_vec(vec![1.0, 0.0]);
        let a = angular_calibration(&cfg, 1.0, &mean, &isotropic_cov(0.02)).unwrap();
        assert!((a.rho - 1.0).abs() < 0.01, "{a:?}");
        assert!((a.coverage - 0.95).abs() < 0.005);
    }

    #[test]
    fn crossing_interpolates_in_log_space() {
        let xs = [0.1, 0.2, 0.4];
        let ys = [1.2, 1.1, 0.9];
        let c = crossing(&xs, &ys, &[false; 3], 1.0).unwrap();
        assert!((c - (0.2f64.ln() + 0.5 * 2f64.ln()).exp()).abs() < 1e-12);
        assert_eq!(crossing(&xs, &ys, &[false, false, true], 1.0), None);
        assert_eq!(crossing(&xs, &[0.9, 0.8, 0.7], &[false; 3], 1.0), None);
    }

    #[test]
    fn sweep_is_deterministic_and_enveloped() {
        let cfg = small();
        let a = circle_sweep(&cfg).unwrap();
        let b = circle_sweep(&cfg).unwrap();
        assert_eq!(sweep_table(&a).unwrap().to_csv().unwrap(), sweep_table(&b).unwrap().to_csv().unwrap());
        assert!(a.rows.iter().all(|r| r.envelope_ok));
        for r in &a.rows {
            assert!((r.report.reassembled_total() - r.report.total).abs() <= 1e-12 * r.report.total.max(1.0));
        }
        let other = circle_sweep(&SweepConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.rows[0].w2_coupled, other.rows[0].w2_coupled);
    }

    #[test]
    fn stress_unit_eta_matches_baseline_and_offsets_increase() {
        let cfg = small();
        let s = circle_stress(&cfg).unwrap();
        let base = circle_sweep(&cfg).unwrap();
        let unit: Vec<&AnisotropyRow> = s.anisotropy.iter().filter(|r| r.eta == 1.0).collect();
        assert_eq!(unit.len(), base.rows.len());
        for (u, b) in unit.iter().zip(&base.rows) {
            assert_eq!(u.angular, b.angular);
            assert_eq!(u.seed, b.seed);
        }
        let eps: Vec<f64> = s.offsets.iter().map(|r| r.epsilon_analytic).collect();
        assert!(eps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn conditioning_demo_rows() {
        let cfg = SweepConfig {
            cond_sigmas: vec![0.05],
            cond_deltas: vec![0.0],
            ..small()
        };
        let out = conditioning_demo(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        for r in &out.rows {
            assert!(r.tv_ok && r.envelope_ok, "{r:?}");
        }
        let affine = out.rows.last().unwrap();
        let rep = affine.report.unwrap();
        assert_eq!(rep.interior_term, 0.0);
        assert!(affine.w2_assignment < 4.0 / (256f64).sqrt());
    }

    #[test]
    fn config_from_flat() {
        let c = FlatConfig::parse("radii = [1.0]\nsamples = 5000\nnormalization = \"none\"").unwrap();
        let cfg = SweepConfig::from_flat(&c).unwrap();
        assert_eq!(cfg.radii, vec![1.0]);
        assert_eq!(cfg.normalization, Normalization::None);
        assert!(SweepConfig::from_flat(&FlatConfig::parse("samples = 10").unwrap()).is_err());
        assert!(SweepConfig::from_flat(&FlatConfig::parse("bogus = 1").unwrap()).is_err());
        assert_eq!(cfg.offset_grid().len(), 9);
        let g = cfg.sigma_grid();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 0.02);
        assert_eq!(g[24], 1.2);
    }
}
