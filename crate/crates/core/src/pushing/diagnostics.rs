use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Pose, PoseContact, TrajectorySolution};
use crate::bounds::curvature_reach_proxies;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{median, sample_covariance, spearman};
use crate::rng;
use crate::tolerances::Tolerances;

/// Per-step row of the trajectory table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub kappa_hat: f64,
    pub rho_hat: f64,
    pub s: f64,
    pub locality: f64,
    pub rho_mc: f64,
    pub delta_fro: f64,
    pub tr_unc_xy: f64,
    pub tr_con_xy: f64,
    pub reduction_pct: f64,
    pub failures: usize,
}

fn xy(m: &Matrix3<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

/// Monte Carlo mismatch between the exact projection of `N(mean, cov)` and
/// its tangent linearization `P cov P`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Mismatch {
    rho_mc: f64,
    delta_fro: f64,
    failures: usize,
}

fn mc_mismatch(
    contact: &PoseContact,
    mean: &Pose,
    cov: &Matrix3<f64>,
    normal: &Vector3<f64>,
    budget: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<Mismatch> {
    if budget < 2 {
        return Err(Error::InvalidArgument("Monte Carlo budget must be at least 2".into()));
    }
    let g = Gaussian::new(
        DVector::from_column_slice(mean.as_slice()),
        DMatrix::from_column_slice(3, 3, cov.as_slice()),
    )?;
    let draws = g.sample_points(budget, seed);
    let projected: Vec<Option<DVector<f64>>> = draws
        .par_iter()
        .map(|z| {
            contact
                .project(&Pose::new(z[0], z[1], z[2]), tol)
                .ok()
                .map(|y| DVector::from_column_slice(y.as_slice()))
        })
        .collect();
    let failures = projected.iter().filter(|p| p.is_none()).count();
    if failures as f64 > tol.max_failure_fraction * budget as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: budget,
        });
    }
    let kept: Vec<DVector<f64>> = projected.into_iter().flatten().collect();
    let mc = sample_covariance(&kept);
    let mc = Matrix3::from_iterator(mc.iter().copied());
    let p = Matrix3::identity() - normal * normal.transpose();
    let lin = p * cov * p.transpose();
    let (mc_xy, lin_xy) = (xy(&mc), xy(&lin));
    Ok(Mismatch {
        rho_mc: mc_xy.trace() / lin_xy.trace(),
        delta_fro: (mc_xy - lin_xy).norm() / lin_xy.norm(),
        failures,
    })
}

fn step_seed(seed: u64, k: usize) -> u64 {
    rng::derive_seed(seed, k as u64)
}

/// Diagnostics of free pose `k` with `mc_budget` projected samples.
pub fn step_diagnostics(solution: &TrajectorySolution, k: usize, mc_budget: usize, seed: u64) -> Result<StepDiagnostics> {
    let tol = Tolerances::default();
    let unc = solution.unc_block(k)?;
    let con = solution.con_block(k)?;
    let e = solution.contact_eval(k)?;
    let prox = curvature_reach_proxies(
        &DVector::from_column_slice(e.gradient.as_slice()),
        &DMatrix::from_column_slice(3, 3, e.hessian.as_slice()),
        &DMatrix::from_column_slice(3, 3, unc.as_slice()),
    )?;
    let normal = e.gradient.normalize();
    let mm = mc_mismatch(
        &solution.contact(k),
        &solution.poses[k],
        &unc,
        &normal,
        mc_budget,
        step_seed(seed, k),
        &tol,
    )?;
    let tr_unc_xy = xy(&unc).trace();
    let tr_con_xy = xy(&con).trace();
    Ok(StepDiagnostics {
        k,
        kappa_hat: prox.kappa_hat,
        rho_hat: prox.rho_hat,
        s: prox.s,
        locality: prox.locality,
        rho_mc: mm.rho_mc,
        delta_fro: mm.delta_fro,
        tr_unc_xy,
        tr_con_xy,
        reduction_pct: 100.0 * (1.0 - tr_con_xy / tr_unc_xy),
        failures: mm.failures,
    })
}

/// Diagnostics for every free pose.
pub fn trajectory_diagnostics(solution: &TrajectorySolution, mc_budget: usize, seed: u64) -> Result<Vec<StepDiagnostics>> {
    (1..solution.poses.len())
        .map(|k| step_diagnostics(solution, k, mc_budget, seed))
        .collect()
}

/// Trajectory-wide aggregates of the per-step table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub n_steps: usize,
    pub max_constraint_residual: f64,
    pub median_rho_mc: f64,
    pub median_delta_fro: f64,
    pub spearman_mismatch_locality: f64,
    /// `(k, reduction_pct)` at the quarter points.
    pub reductions: Vec<(usize, f64)>,
    pub locality_at: Vec<(usize, f64)>,
    pub iterations: usize,
}

impl TrajectorySummary {
    pub fn new(solution: &TrajectorySolution, rows: &[StepDiagnostics]) -> Self {
        let rho: Vec<f64> = rows.iter().map(|r| r.rho_mc).collect();
        let dev: Vec<f64> = rho.iter().map(|r| r - 1.0).collect();
        let loc: Vec<f64> = rows.iter().map(|r| r.locality).collect();
        let delta: Vec<f64> = rows.iter().map(|r| r.delta_fro).collect();
        let n = solution.poses.len();
        let marks: Vec<usize> = [(n + 2) / 4, n / 2, 3 * n / 4, n - 1]
            .into_iter()
            .map(|k| k.max(1))
            .collect();
        let pick = |f: &dyn Fn(&StepDiagnostics) -> f64| -> Vec<(usize, f64)> {
            marks
                .iter()
                .filter_map(|k| rows.iter().find(|r| r.k == *k).map(|r| (*k, f(r))))
                .collect()
        };
        Self {
            n_steps: n,
            max_constraint_residual: solution.max_residual(),
            median_rho_mc: median(&rho),
            median_delta_fro: median(&delta),
            spearman_mismatch_locality: spearman(&dev, &loc),
            reductions: pick(&|r| r.reduction_pct),
            locality_at: pick(&|r| r.locality),
            iterations: solution.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressMode {
    Isotropic,
    NormalOnly,
    TangentialOnly,
}

impl StressMode {
    pub const ALL: [StressMode; 3] = [StressMode::Isotropic, StressMode::NormalOnly, StressMode::TangentialOnly];

    /// `(alpha_n, alpha_t)` for inflation factor `alpha`.
    pub fn factors(self, alpha: f64) -> (f64, f64) {
        match self {
            StressMode::Isotropic => (alpha, alpha),
            StressMode::NormalOnly => (alpha, 1.0),
            StressMode::TangentialOnly => (1.0, alpha),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StressMode::Isotropic => "isotropic",
            StressMode::NormalOnly => "normal-only",
            StressMode::TangentialOnly => "tangential-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub k: usize,
    pub alpha: f64,
    pub mode: StressMode,
    pub alpha_n: f64,
    pub alpha_t: f64,
    pub rho_mc: f64,
    pub delta_fro: f64,
}

/// Inflates `Sigma_unc,k*` by `A = alpha_t (I - n n^T) + alpha_n n n^T`,
/// with `n` the unit in-plane contact normal, and recomputes the mismatch.
/// Every row at `k*` reuses the baseline draws of that step.
pub fn directional_stress(
    solution: &TrajectorySolution,
    k_star: usize,
    alphas: &[f64],
    mc_budget: usize,
    seed: u64,
) -> Result<Vec<StressRow>> {
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::InvalidArgument(format!("inflation factor {a} must be positive")));
    }
    let tol = Tolerances::default();
    let unc = solution.unc_block(k_star)?;
    let e = solution.contact_eval(k_star)?;
    let gxy = Vector3::new(e.gradient[0], e.gradient[1], 0.0);
    let nh = gxy.normalize();
    let nn = nh * nh.transpose();
    let normal = e.gradient.normalize();
    let contact = solution.contact(k_star);
    let mut rows = Vec::new();
    for &alpha in alphas {
        for mode in StressMode::ALL {
            let (an, at) = mode.factors(alpha);
            // identity plus corrections so alpha = 1 leaves the covariance untouched
            let a = Matrix3::identity() + nn * (an - 1.0) + (Matrix3::identity() - nn) * (at - 1.0);
            let cov = if an == 1.0 && at == 1.0 { unc } else { a * unc * a.transpose() };
            let mm = mc_mismatch(
                &contact,
                &solution.poses[k_star],
                &cov,
                &normal,
                mc_budget,
                step_seed(seed, k_star),
                &tol,
            )?;
            rows.push(StressRow {
                k: k_star,
                alpha,
                mode,
                alpha_n: an,
                alpha_t: at,
                rho_mc: mm.rho_mc,
                delta_fro: mm.delta_fro,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pushing::{simulate_and_solve, PushingProblem};

    #[test]
    fn small_noise_limit_is_linear() {
        let p = PushingProblem {
            q_diag: [0.03f64.powi(2) * 1e-6, 0.03f64.powi(2) * 1e-6, 0.01f64.powi(2) * 1e-6],
            ..PushingProblem::default()
        };
        let (_, sol) = simulate_and_solve(&p).unwrap();
        for k in [5, 25, 49] {
            let d = step_diagnostics(&sol, k, 4000, 3).unwrap();
            assert!((d.rho_mc - 1.0).abs() < 0.05, "k={k} rho={}", d.rho_mc);
        }
    }

    #[test]
    fn stress_at_unit_alpha_matches_baseline() {
        let (_, sol) = simulate_and_solve(&PushingProblem::default()).unwrap();
        let base = step_diagnostics(&sol, 49, 1000, 4).unwrap();
        let rows = directional_stress(&sol, 49, &[1.0], 1000, 4).unwrap();
        for r in &rows {
            assert_eq!(r.rho_mc, base.rho_mc);
            assert_eq!(r.delta_fro, base.delta_fro);
        }
        assert!(directional_stress(&sol, 49, &[0.0], 1000, 4).is_err());
        assert!(directional_stress(&sol, 0, &[1.0], 1000, 4).is_err());
    }
}
