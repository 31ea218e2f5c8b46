//! Marginalization and conditioning W2 bounds with calibrated constants,
//! curvature/reach proxies, and the runtime escalation gate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{EmpiricalMeasure, Gaussian};
use crate::linalg::{lambda_max, quantile, sorted_eigen, split_row_space};
use crate::manifold::{ChartConstants, ManifoldModel, TangentFrame};
use crate::rng;

/// Floor on curvature used when converting to a reach proxy.
pub const KAPPA_FLOOR: f64 = 1e-8;

/// Where a tail probability came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailSource {
    Analytic,
    Empirical,
}

/// How `epsilon` enters the marginal bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum TailMode {
    /// Gaussian concentration bound at `r`.
    Analytic,
    /// A supplied (sample-based) tail probability.
    Empirical(f64),
}

/// Constants of the marginal bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MargConstants {
    pub kappa: f64,
    pub kappa_r: f64,
    pub c_loc: Option<f64>,
    pub c_tail: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MargBoundReport {
    pub r: f64,
    pub kappa: f64,
    pub kappa_r: f64,
    pub c_loc: f64,
    pub localized_fourth_moment: f64,
    pub local_term: f64,
    pub epsilon: f64,
    pub epsilon_source: TailSource,
    pub c_tail: f64,
    pub tail_term: f64,
    pub total: f64,
}

impl MargBoundReport {
    /// Recomputes the total from the stored terms.
    pub fn reassembled_total(&self) -> f64 {
        let local = self.c_loc * (self.kappa + self.kappa_r) * self.localized_fourth_moment.sqrt();
        let tail = self.c_tail * self.epsilon.powf(0.25);
        local + tail
    }
}

/// `C_loc = safety * quantile_q(||g(x) - R(Pi (x - base))|| / ((kappa + kappa_R) ||x - base||^2))`
/// over `n_points` uniform points of the punctured ambient ball `B(base, r)`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_c_loc(
    m: &ManifoldModel,
    frame: &TangentFrame,
    r: f64,
    kappa: f64,
    kappa_r: f64,
    n_points: usize,
    q: f64,
    safety: f64,
    seed: u64,
) -> Result<f64> {
    if n_points < 50 {
        return Err(Error::InvalidArgument("C_loc calibration needs at least 50 points".into()));
    }
    let n = frame.ambient_dim();
    let ratios: Result<Vec<f64>> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, i as u64);
            let dir = DVector::from_vec(rng::standard_normals(&mut g, n));
            let dir = &dir / dir.norm();
            let rad = r * rng::uniform(&mut g).max(1e-12).powf(1.0 / n as f64);
            let x = &frame.base + dir * rad;
            let exact = m.project(&x)?;
            let sur = m.retract(frame, &frame.coords(&x))?;
            let num = (exact - sur).norm();
            let den = (kappa + kappa_r) * rad * rad;
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect();
    Ok(safety * quantile(&ratios?, q))
}

/// Assembles `C_loc (kappa + kappa_R) sqrt(E[||X - base||^4 1_A]) + C_tail eps^{1/4}`.
pub fn marg_bound(
    g: &Gaussian,
    m: &ManifoldModel,
    frame: &TangentFrame,
    r: f64,
    constants: &MargConstants,
    tail_mode: TailMode,
    mc_budget: usize,
    seed: u64,
) -> Result<MargBoundReport> {
    let c_loc = constants.c_loc.ok_or(Error::MissingConstant("C_loc"))?;
    let c_tail = constants.c_tail.ok_or(Error::MissingConstant("C_tail"))?;
    let reach = m.reach();
    if !(r > 0.0) || (reach.is_finite() && r >= reach / 2.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must lie in (0, reach/2)")));
    }
    let m4 = g.truncated_fourth_moment(&frame.base, r, mc_budget, seed)?;
    let local_term = c_loc * (constants.kappa + constants.kappa_r) * m4.sqrt();
    let (epsilon, epsilon_source) = match tail_mode {
        TailMode::Analytic => (g.tail_prob_bound(&frame.base, r)?, TailSource::Analytic),
        TailMode::Empirical(e) => (e.clamp(0.0, 1.0), TailSource::Empirical),
    };
    let tail_term = c_tail * epsilon.powf(0.25);
    Ok(MargBoundReport {
        r,
        kappa: constants.kappa,
        kappa_r: constants.kappa_r,
        c_loc,
        localized_fourth_moment: m4,
        local_term,
        epsilon,
        epsilon_source,
        c_tail,
        tail_term,
        total: local_term + tail_term,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CTailMode {
    Moment,
    Calibrated,
}

/// `(E||Y - c||^4)^{1/4}` summed over both measures.
pub fn c_tail_moment(exact: &EmpiricalMeasure, surrogate: &EmpiricalMeasure, center: &DVector<f64>) -> Result<f64> {
    if exact.is_empty() || surrogate.is_empty() {
        return Err(Error::InvalidArgument("C_tail needs nonempty measures".into()));
    }
    Ok(exact.moment_about(center, 4).powf(0.25) + surrogate.moment_about(center, 4).powf(0.25))
}

/// One sweep point for the calibrated tail constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCalibrationPoint {
    pub proxy: f64,
    pub local_term: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCalibration {
    /// 90% quantile of `proxy / eps^{1/4}`.
    pub prefit: f64,
    /// Smallest inflation of the prefit that envelopes every point.
    pub value: f64,
}

/// Calibrated `C_tail`: a 90% quantile pre-fit of `proxy / eps^{1/4}`,
/// raised until `local + C_tail eps^{1/4} >= proxy` at every point.
pub fn c_tail_calibrated(points: &[TailCalibrationPoint]) -> Result<TailCalibration> {
    let usable: Vec<&TailCalibrationPoint> = points.iter().filter(|p| p.epsilon > 0.0).collect();
    if usable.is_empty() {
        return Err(Error::InvalidArgument("no sweep point has a positive tail probability".into()));
    }
    let ratios: Vec<f64> = usable.iter().map(|p| p.proxy / p.epsilon.powf(0.25)).collect();
    let prefit = quantile(&ratios, 0.9);
    let needed = usable
        .iter()
        .map(|p| (p.proxy - p.local_term) / p.epsilon.powf(0.25))
        .fold(0.0_f64, f64::max);
    // one ulp of headroom keeps the envelope strict after rounding
    let value = prefit.max(needed * (1.0 + 1e-12));
    Ok(TailCalibration { prefit, value })
}

/// Tail quantities entering the conditioning bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondTails {
    pub tau_p: f64,
    pub tau_p_hat: f64,
    pub eps_p: f64,
    pub eps_q: f64,
    pub source: TailSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondBoundReport {
    pub r: f64,
    pub lipschitz: f64,
    pub kappa_psi: f64,
    pub kappa_j: f64,
    pub omega_norm: f64,
    pub delta_norm: f64,
    pub eta_r: f64,
    pub tau_p: f64,
    pub tau_p_hat: f64,
    pub eps_p: f64,
    pub eps_q: f64,
    pub tails_source: TailSource,
    pub interior_term: f64,
    pub tail_terms: f64,
    pub total: f64,
}

impl CondBoundReport {
    pub fn reassembled_total(&self) -> f64 {
        let eta = eta_r(self.omega_norm, self.kappa_psi, self.kappa_j, self.delta_norm, self.r);
        let interior = 2.0 * self.lipschitz * self.r * eta.tanh().sqrt();
        self.tau_p + self.tau_p_hat + self.lipschitz * self.r * (self.eps_p.sqrt() + self.eps_q.sqrt()) + interior
    }
}

/// `(||Omega|| kappa_psi / 2)(||delta|| + r) r^2 + (||Omega|| kappa_psi^2 / 8) r^4 + (kappa_J / 2) r^2`.
pub fn eta_r(omega_norm: f64, kappa_psi: f64, kappa_j: f64, delta_norm: f64, r: f64) -> f64 {
    let r2 = r * r;
    0.5 * omega_norm * kappa_psi * (delta_norm + r) * r2 + omega_norm * kappa_psi * kappa_psi / 8.0 * r2 * r2 + 0.5 * kappa_j * r2
}

/// `tau_P + tau_P^ + L r (sqrt(eps_P) + sqrt(eps_Q)) + 2 L r sqrt(tanh(eta_r))`.
pub fn cond_bound(
    g: &Gaussian,
    frame: &TangentFrame,
    r: f64,
    chart: Option<&ChartConstants>,
    tails: &CondTails,
) -> Result<CondBoundReport> {
    let c = chart.ok_or(Error::MissingConstant("chart constants"))?;
    let omega_norm = g.precision_norm()?;
    let delta_norm = g.offset_to(&frame.base)?.norm();
    let eta = eta_r(omega_norm, c.kappa_psi, c.kappa_j, delta_norm, r);
    let interior_term = 2.0 * c.lipschitz * r * eta.tanh().sqrt();
    let tail_terms = tails.tau_p + tails.tau_p_hat + c.lipschitz * r * (tails.eps_p.sqrt() + tails.eps_q.sqrt());
    Ok(CondBoundReport {
        r,
        lipschitz: c.lipschitz,
        kappa_psi: c.kappa_psi,
        kappa_j: c.kappa_j,
        omega_norm,
        delta_norm,
        eta_r: eta,
        tau_p: tails.tau_p,
        tau_p_hat: tails.tau_p_hat,
        eps_p: tails.eps_p,
        eps_q: tails.eps_q,
        tails_source: tails.source,
        interior_term,
        tail_terms,
        total: tail_terms + interior_term,
    })
}

/// Curvature and reach proxies of a scalar constraint at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProxies {
    pub kappa_hat: f64,
    pub rho_hat: f64,
    /// `sqrt(||Sigma||_op)`.
    pub s: f64,
    /// `s / rho_hat`.
    pub locality: f64,
}

/// `kappa = ||N^T Hess c N||_op / ||grad c||`, `rho = 1 / max(kappa, 1e-8)`,
/// `s = sqrt(||Sigma_unc||_op)`.
pub fn curvature_reach_proxies(
    gradient: &DVector<f64>,
    hessian: &DMatrix<f64>,
    sigma_unc: &DMatrix<f64>,
) -> Result<CurvatureProxies> {
    let n = gradient.len();
    check_dim(n, hessian.nrows())?;
    check_dim(n, sigma_unc.nrows())?;
    let gnorm = gradient.norm();
    if !(gnorm > 0.0) {
        return Err(Error::RankDeficient { sigma_min: gnorm });
    }
    let (_, tangent, _) = split_row_space(&DMatrix::from_row_slice(1, n, gradient.as_slice()));
    let red = tangent.transpose() * hessian * &tangent;
    let (vals, _) = sorted_eigen(&red);
    let kappa_hat = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs())) / gnorm;
    let rho_hat = 1.0 / kappa_hat.max(KAPPA_FLOOR);
    let s = lambda_max(sigma_unc).max(0.0).sqrt();
    Ok(CurvatureProxies {
        kappa_hat,
        rho_hat,
        s,
        locality: s / rho_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    SingleChart,
    Relinearize,
    MultiChart,
    SampleBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub s_c_max: f64,
    pub s_delta_max: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            s_c_max: 1.0 / 6.0,
            s_delta_max: 0.5,
        }
    }
}

/// Locality indicators feeding the gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateIndicators {
    /// `kappa sqrt(||Sigma||_op)`.
    pub s_c: f64,
    /// `||delta|| / rho`.
    pub s_delta: f64,
}

impl GateIndicators {
    pub fn new(kappa: f64, sigma_op: f64, delta_norm: f64, reach: f64) -> Self {
        Self {
            s_c: kappa * sigma_op.max(0.0).sqrt(),
            s_delta: if reach.is_finite() { delta_norm / reach } else { 0.0 },
        }
    }
}

/// Bound split into a local part and a tail part, as seen by the gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub total: f64,
    pub local: f64,
    pub tail: f64,
}

impl From<&MargBoundReport> for BoundSummary {
    fn from(r: &MargBoundReport) -> Self {
        Self {
            total: r.total,
            local: r.local_term,
            tail: r.tail_term,
        }
    }
}

impl From<&CondBoundReport> for BoundSummary {
    fn from(r: &CondBoundReport) -> Self {
        Self {
            total: r.total,
            local: r.interior_term,
            tail: r.tail_terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub s_c: f64,
    pub s_delta: f64,
    pub predicted_bound: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub rationale: String,
}

/// Staged verdict: single chart when the bound and both indicators pass;
/// relinearize when only the offset indicator fails; sample-based when the
/// tail part dominates an out-of-tolerance bound; multi-chart otherwise.
pub fn runtime_gate(
    bound: BoundSummary,
    indicators: GateIndicators,
    tolerance: f64,
    thresholds: &GateThresholds,
) -> GateDecision {
    let bound_ok = bound.total <= tolerance;
    let curvature_ok = indicators.s_c <= thresholds.s_c_max;
    let offset_ok = indicators.s_delta <= thresholds.s_delta_max;
    let (verdict, rationale) = if bound_ok && curvature_ok && offset_ok {
        (Verdict::SingleChart, "bound within tolerance and both locality indicators pass".to_string())
    } else if bound_ok && curvature_ok {
        (
            Verdict::Relinearize,
            format!(
                "offset indicator {:.3} exceeds {:.3}; move the linearization point",
                indicators.s_delta, thresholds.s_delta_max
            ),
        )
    } else if !bound_ok && bound.tail >= bound.local {
        (
            Verdict::SampleBased,
            format!("tail term {:.3e} dominates the local term {:.3e}", bound.tail, bound.local),
        )
    } else {
        let mut why = Vec::new();
        if !bound_ok {
            why.push(format!("bound {:.3e} exceeds tolerance {:.3e}", bound.total, tolerance));
        }
        if !curvature_ok {
            why.push(format!("curvature load {:.3} exceeds {:.3}", indicators.s_c, thresholds.s_c_max));
        }
        if !offset_ok {
            why.push(format!("offset indicator {:.3} exceeds {:.3}", indicators.s_delta, thresholds.s_delta_max));
        }
        (Verdict::MultiChart, why.join("; "))
    };
    GateDecision {
        s_c: indicators.s_c,
        s_delta: indicators.s_delta,
        predicted_bound: bound.total,
        tolerance,
        verdict,
        rationale,
    }
}
