//! Exact and surrogate samplers for the four target laws: projection
//! marginalization, tangent-retraction marginalization, surface-measure
//! conditioning, and the chart-lifted tangent law.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::affine::condition_tangent_coords;
use crate::error::{Error, Result};
use crate::gaussian::{fourth_moment, gaussian_tail_bound, EmpiricalMeasure, Gaussian};
use crate::manifold::{ChartKind, ManifoldModel, TangentFrame};
use crate::rng;
use crate::tolerances::Tolerances;

/// Seed tags separating the proposal and resampling streams from the ambient one.
const TAG_PROPOSAL: u64 = 1;
const TAG_RESAMPLE: u64 = 2;

/// Everything the samplers need: manifold, ambient law, linearization
/// point, chart radius, budget and seed.
#[derive(Debug, Clone)]
pub struct PushforwardSpec {
    pub manifold: ManifoldModel,
    pub ambient: Gaussian,
    pub frame: TangentFrame,
    pub chart: ChartKind,
    /// Chart radius `r`.
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl PushforwardSpec {
    /// Linearizes at the projection of the ambient mean.
    pub fn new(manifold: ManifoldModel, ambient: Gaussian, radius: f64, samples: usize, seed: u64) -> Result<Self> {
        let base = manifold.project(ambient.mean())?;
        Self::with_base(manifold, ambient, base, radius, samples, seed)
    }

    pub fn with_base(
        manifold: ManifoldModel,
        ambient: Gaussian,
        base: DVector<f64>,
        radius: f64,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let frame = manifold.tangent_frame(&base)?;
        let reach = manifold.reach();
        if !(radius > 0.0) || (reach.is_finite() && radius >= reach / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "chart radius {radius} must lie in (0, reach/2) with reach {reach}"
            )));
        }
        if samples == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let chart = manifold.default_chart();
        Ok(Self {
            manifold,
            ambient,
            frame,
            chart,
            radius,
            samples,
            seed,
            tolerances: Tolerances::default(),
        })
    }

    pub fn with_chart(mut self, chart: ChartKind) -> Self {
        self.chart = chart;
        self
    }

    pub fn with_samples(mut self, samples: usize, seed: u64) -> Self {
        self.samples = samples;
        self.seed = seed;
        self
    }

    pub fn base(&self) -> &DVector<f64> {
        &self.frame.base
    }

    fn is_flat(&self) -> bool {
        matches!(self.manifold, ManifoldModel::Affine(_))
    }

    /// Radius at which the surrogate extension clamps (unbounded on flat models).
    fn clamp_radius(&self) -> f64 {
        if self.is_flat() {
            f64::INFINITY
        } else {
            self.radius
        }
    }

    fn surrogate_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.frame.coords(x);
        self.manifold.retract_clamped(&self.frame, &v, self.clamp_radius())
    }
}

/// Index-paired exact and surrogate marginal samples from one ambient stream.
#[derive(Debug, Clone)]
pub struct CoupledMarginal {
    pub ambient: Vec<DVector<f64>>,
    pub exact: Vec<DVector<f64>>,
    pub surrogate: Vec<DVector<f64>>,
    /// Ambient draws dropped because a projection failed.
    pub failures: usize,
    /// Draws whose tangent coordinates were clamped to the chart rim.
    pub clamped: usize,
}

impl CoupledMarginal {
    pub fn exact_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.exact.clone()).expect("uniform points share one dimension")
    }

    pub fn surrogate_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.surrogate.clone()).expect("uniform points share one dimension")
    }
}

/// Runs both marginal maps on every ambient draw; pairs with a failed exact
/// projection are dropped from both outputs.
pub fn coupled_marginal_samples(spec: &PushforwardSpec) -> Result<CoupledMarginal> {
    let ambient = spec.ambient.sample_points(spec.samples, spec.seed);
    let mapped: Vec<Result<(DVector<f64>, DVector<f64>, bool)>> = ambient
        .par_iter()
        .map(|x| {
            let exact = spec.manifold.project(x)?;
            let clamped = spec.frame.coords(x).norm() > spec.clamp_radius();
            Ok((exact, spec.surrogate_point(x)?, clamped))
        })
        .collect();
    let mut out = CoupledMarginal {
        ambient: Vec::with_capacity(spec.samples),
        exact: Vec::with_capacity(spec.samples),
        surrogate: Vec::with_capacity(spec.samples),
        failures: 0,
        clamped: 0,
    };
    for (x, m) in ambient.into_iter().zip(mapped) {
        match m {
            Ok((e, s, c)) => {
                out.ambient.push(x);
                out.exact.push(e);
                out.surrogate.push(s);
                out.clamped += c as usize;
            }
            Err(Error::ProjectionAtCenter | Error::TubeViolation { .. } | Error::NoConvergence { .. }) => {
                out.failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    check_failures(out.failures, spec.samples, &spec.tolerances)?;
    Ok(out)
}

fn check_failures(failed: usize, total: usize, tol: &Tolerances) -> Result<()> {
    if failed as f64 > tol.max_failure_fraction * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

/// Pushforward of the ambient law through the metric projection.
pub fn exact_marginal_samples(spec: &PushforwardSpec) -> Result<EmpiricalMeasure> {
    Ok(coupled_marginal_samples(spec)?.exact_measure())
}

/// Pushforward through `x -> R(clamp(N^T (x - base)))`, on the same ambient
/// draws as [`exact_marginal_samples`].
pub fn surrogate_marginal_samples(spec: &PushforwardSpec) -> Result<EmpiricalMeasure> {
    let ambient = spec.ambient.sample_points(spec.samples, spec.seed);
    let pts: Result<Vec<DVector<f64>>> = ambient.par_iter().map(|x| spec.surrogate_point(x)).collect();
    Ok(EmpiricalMeasure::uniform(pts?).expect("uniform points share one dimension"))
}

/// Output of the importance sampler for the surface-measure conditional.
#[derive(Debug, Clone)]
pub struct ExactConditional {
    /// Resampled, uniformly weighted points on the manifold.
    pub measure: EmpiricalMeasure,
    /// Chart coordinates of the resampled points.
    pub coords: Vec<DVector<f64>>,
    pub ess: f64,
    /// Weighted mass outside the chart ball plus the certified surplus.
    pub epsilon: f64,
    /// Surplus for mass beyond the widened domain.
    pub epsilon_surplus: f64,
    /// Binomial 95% half-width of the sampled part of `epsilon`.
    pub epsilon_halfwidth: f64,
    pub tau: f64,
    /// `(min, max)` of the likelihood ratio `p_r / q_r` on the chart ball.
    pub ratio_range: (f64, f64),
}

/// Chart-lifted tangent law with the radial-clamp extension.
#[derive(Debug, Clone)]
pub struct SurrogateConditional {
    pub measure: EmpiricalMeasure,
    /// Unclamped tangent draws.
    pub coords: Vec<DVector<f64>>,
    /// Fraction of draws clamped to the rim.
    pub epsilon: f64,
    pub tau: f64,
}

fn proposal_draws(spec: &PushforwardSpec) -> Result<(Gaussian, Vec<DVector<f64>>)> {
    let q = condition_tangent_coords(&spec.ambient, &spec.frame)?;
    let draws = q.sample_points(spec.samples, rng::derive_seed(spec.seed, TAG_PROPOSAL));
    Ok((q, draws))
}

/// Surface-measure conditional by self-normalized importance sampling from
/// the tangent law, on a widened chart domain of radius `2r`, resampled
/// systematically to uniform weights.
pub fn exact_conditional_samples(spec: &PushforwardSpec) -> Result<ExactConditional> {
    let (q, draws) = proposal_draws(spec)?;
    let r = spec.radius;
    let domain = if spec.is_flat() { f64::INFINITY } else { 2.0 * r };
    let evaluated: Vec<Result<Option<(DVector<f64>, f64)>>> = draws
        .par_iter()
        .map(|v| {
            if v.norm() > domain {
                return Ok(None);
            }
            if spec.is_flat() {
                return Ok(Some((spec.frame.lift(v), 0.0)));
            }
            let (y, j) = spec.manifold.chart(&spec.frame, v, spec.chart)?;
            let logw = spec.ambient.log_density(&y)? + j.ln() - spec.ambient.log_density(&spec.frame.lift(v))?;
            Ok(Some((y, logw)))
        })
        .collect();
    let mut points = Vec::with_capacity(draws.len());
    let mut logw = Vec::with_capacity(draws.len());
    for e in evaluated {
        match e? {
            Some((y, lw)) => {
                points.push(Some(y));
                logw.push(lw);
            }
            None => {
                points.push(None);
                logw.push(f64::NEG_INFINITY);
            }
        }
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::EffectiveSampleSizeTooLow {
            ess: 0.0,
            min: spec.tolerances.min_ess_fraction * spec.samples as f64,
        });
    }
    let raw: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let min_ess = spec.tolerances.min_ess_fraction * spec.samples as f64;
    if ess < min_ess {
        return Err(Error::EffectiveSampleSizeTooLow { ess, min: min_ess });
    }

    // tails relative to the chart ball B_r
    let base = spec.base();
    let (mut eps, mut tau2) = (0.0, 0.0);
    for ((v, p), wi) in draws.iter().zip(&points).zip(&w) {
        if let Some(y) = p {
            if v.norm() > r {
                eps += wi;
                tau2 += wi * (y - base).norm_squared();
            }
        }
    }
    let surplus = if spec.is_flat() {
        0.0
    } else {
        gaussian_tail_bound(q.mean().norm(), q.lambda_max(), q.dim(), domain)
    };
    let eps_hw = 1.96 * (eps * (1.0 - eps) / ess).sqrt();

    // likelihood ratio p_r / q_r on B_r: weights normalized over the ball
    let inside: Vec<f64> = draws
        .iter()
        .zip(&raw)
        .filter(|(v, _)| v.norm() <= r)
        .map(|(_, x)| *x)
        .collect();
    let ratio_range = if inside.is_empty() {
        (1.0, 1.0)
    } else {
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        inside
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(x / mean), hi.max(x / mean)))
    };

    let all_equal = w.iter().all(|x| (x - w[0]).abs() <= 1e-15);
    let picks: Vec<usize> = if all_equal {
        (0..w.len()).collect()
    } else {
        let u = rng::uniform(&mut rng::stream(rng::derive_seed(spec.seed, TAG_RESAMPLE), 0));
        systematic_resample(&w, u)
    };
    let coords: Vec<DVector<f64>> = picks.iter().map(|&i| draws[i].clone()).collect();
    let pts: Vec<DVector<f64>> = picks
        .iter()
        .map(|&i| points[i].clone().expect("resampled draws have positive weight"))
        .collect();
    Ok(ExactConditional {
        measure: EmpiricalMeasure::uniform(pts)?,
        coords,
        ess,
        epsilon: eps + surplus,
        epsilon_surplus: surplus,
        epsilon_halfwidth: eps_hw,
        tau: tau2.sqrt(),
        ratio_range,
    })
}

/// Tangent law lifted through the chart with radial clamping; consumes the
/// same proposal stream as [`exact_conditional_samples`].
pub fn surrogate_conditional_samples(spec: &PushforwardSpec) -> Result<SurrogateConditional> {
    let (_, draws) = proposal_draws(spec)?;
    let r = spec.clamp_radius();
    let pts: Result<Vec<DVector<f64>>> = draws
        .par_iter()
        .map(|v| {
            if spec.is_flat() {
                Ok(spec.frame.lift(v))
            } else {
                Ok(spec.manifold.chart_clamped(&spec.frame, v, spec.chart, r)?.0)
            }
        })
        .collect();
    let pts = pts?;
    let measure = EmpiricalMeasure::uniform(pts)?;
    let outside: Vec<bool> = draws.iter().map(|v| v.norm() > spec.radius).collect();
    let (epsilon, tau) = tail_moments(&measure, spec.base(), |i, _| !outside[i]);
    Ok(SurrogateConditional {
        measure,
        coords: draws,
        epsilon,
        tau,
    })
}

/// Analytic tails of the surrogate conditional: `epsilon_Q` from the
/// Gaussian concentration bound at `r`, and `tau` from Cauchy-Schwarz with
/// `||Psi(v) - base|| <= L ||v||`.
pub fn analytic_surrogate_tails(q: &Gaussian, r: f64, lipschitz: f64) -> (f64, f64) {
    let eps = gaussian_tail_bound(q.mean().norm(), q.lambda_max(), q.dim(), r);
    let m4 = fourth_moment(q.mean(), q.cov());
    (eps, lipschitz * (m4.sqrt() * eps.sqrt()).sqrt())
}

/// Systematic resampling of normalized weights with offset `u` in `[0, 1)`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let target = (k as f64 + u) / n as f64;
        while cum < target && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// `(eps, tau)`: weight outside the region, and the root of the weighted
/// mean of `||y - center||^2` over the outside.
pub fn tail_moments(
    measure: &EmpiricalMeasure,
    center: &DVector<f64>,
    inside: impl Fn(usize, &DVector<f64>) -> bool,
) -> (f64, f64) {
    let (mut eps, mut tau2) = (0.0, 0.0);
    for (i, (y, w)) in measure.points().iter().zip(measure.weights()).enumerate() {
        if !inside(i, y) {
            eps += w;
            tau2 += w * (y - center).norm_squared();
        }
    }
    (eps, tau2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{lift_tangent_law, marginalize_affine, AffineManifold};
    use crate::wasserstein::w2_coupled_upper;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn circle_spec(mu: &[f64], sigma: f64, r: f64, n: usize) -> PushforwardSpec {
        let m = ManifoldModel::circle(1.0).unwrap();
        let g = Gaussian::isotropic(dv(mu), sigma).unwrap();
        PushforwardSpec::with_base(m, g, dv(&[1.0, 0.0]), r, n, 7).unwrap()
    }

    fn plane() -> ManifoldModel {
        ManifoldModel::Affine(
            AffineManifold::new(DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.5]), dv(&[0.3])).unwrap(),
        )
    }

    #[test]
    fn radius_must_be_below_half_reach() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let g = Gaussian::isotropic(dv(&[1.2, 0.0]), 0.05).unwrap();
        assert!(PushforwardSpec::new(m, g, 0.5, 10, 1).is_err());
    }

    #[test]
    fn exact_circle_marginal_is_on_manifold() {
        let spec = circle_spec(&[1.2, 0.0], 0.05, 0.3, 10_000);
        let m = exact_marginal_samples(&spec).unwrap();
        assert_eq!(m.len(), 10_000);
        assert!(m.points().iter().all(|y| (y.norm() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn rim_clamping() {
        let spec = circle_spec(&[1.0, 0.0], 0.5, 0.3, 2000);
        let s = surrogate_marginal_samples(&spec).unwrap();
        let rim = spec.manifold.retract(&spec.frame, &dv(&[0.3])).unwrap();
        let rim_neg = spec.manifold.retract(&spec.frame, &dv(&[-0.3])).unwrap();
        let ambient = spec.ambient.sample_points(2000, spec.seed);
        for (x, y) in ambient.iter().zip(s.points()) {
            let v = x[1];
            if v > 0.3 {
                assert!((y - &rim).norm() < 1e-12);
            } else if v < -0.3 {
                assert!((y - &rim_neg).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_marginals_coincide() {
        let g = Gaussian::new(dv(&[0.5, 0.2, -0.4]), DMatrix::from_diagonal(&dv(&[0.3, 0.2, 0.5]))).unwrap();
        let spec = PushforwardSpec::new(plane(), g.clone(), 0.5, 4000, 3).unwrap();
        let c = coupled_marginal_samples(&spec).unwrap();
        assert!(w2_coupled_upper(&c.exact, &c.surrogate).unwrap().value < 1e-12);
        let ManifoldModel::Affine(a) = &spec.manifold else { unreachable!() };
        let closed = marginalize_affine(&g, a).unwrap();
        let em = c.exact_measure();
        let se = (closed.lambda_max() / 4000.0).sqrt();
        assert!((em.mean() - closed.mean()).amax() < 4.0 * se);
    }

    #[test]
    fn affine_conditionals_coincide() {
        let g = Gaussian::new(dv(&[0.5, 0.2, -0.4]), DMatrix::from_diagonal(&dv(&[0.3, 0.2, 0.5]))).unwrap();
        let spec = PushforwardSpec::new(plane(), g.clone(), 0.5, 4000, 3).unwrap();
        let e = exact_conditional_samples(&spec).unwrap();
        let s = surrogate_conditional_samples(&spec).unwrap();
        assert!((e.ess - 4000.0).abs() < 1e-6);
        assert_eq!(e.measure.points(), s.measure.points());
        let q = condition_tangent_coords(&g, &spec.frame).unwrap();
        let lifted = lift_tangent_law(&q, &spec.frame).unwrap();
        let se = (lifted.lambda_max() / 4000.0).sqrt();
        assert!((e.measure.mean() - lifted.mean()).amax() < 4.0 * se);
    }

    #[test]
    fn circle_conditional_tails() {
        let spec = circle_spec(&[1.0, 0.0], 0.05, 0.45, 10_000);
        let s = surrogate_conditional_samples(&spec).unwrap();
        assert_eq!(s.epsilon, 0.0);
        let q = condition_tangent_coords(&spec.ambient, &spec.frame).unwrap();
        let (eps, _) = analytic_surrogate_tails(&q, 0.5, 1.0);
        assert!(eps < 1e-10, "{eps}");
        let e = exact_conditional_samples(&spec).unwrap();
        assert!(e.epsilon < 0.05);
        assert!(e.ess > 9000.0);
        assert!(e.measure.points().iter().all(|y| (y.norm() - 1.0).abs() < 1e-8));
    }

    #[test]
    fn clamped_fraction_matches_tangent_tail() {
        let spec = circle_spec(&[1.0, 0.0], 0.2, 0.2, 20_000);
        let s = surrogate_conditional_samples(&spec).unwrap();
        // P(|N(0, 0.04)| > 0.2) = 2 (1 - Phi(1))
        let expected: f64 = 0.317_310_507_862_914_1;
        let se = (expected * (1.0 - expected) / 20_000.0).sqrt();
        assert!((s.epsilon - expected).abs() < 4.0 * se, "{}", s.epsilon);
    }

    #[test]
    fn tail_moment_cases() {
        let m = EmpiricalMeasure::uniform(vec![dv(&[2.0, 0.0]), dv(&[0.0, 2.0])]).unwrap();
        let c = dv(&[0.0, 0.0]);
        assert_eq!(tail_moments(&m, &c, |_, _| true), (0.0, 0.0));
        let (e, t) = tail_moments(&m, &c, |_, _| false);
        assert_eq!(e, 1.0);
        assert!((t - 2.0).abs() < 1e-15);
    }

    #[test]
    fn systematic_resampling_preserves_mass() {
        let picks = systematic_resample(&[0.5, 0.0, 0.25, 0.25], 0.3);
        assert_eq!(picks, vec![0, 0, 2, 3]);
    }

    #[test]
    fn samplers_are_deterministic() {
        let spec = circle_spec(&[1.2, 0.0], 0.1, 0.3, 500);
        let a = exact_conditional_samples(&spec).unwrap();
        let b = exact_conditional_samples(&spec).unwrap();
        assert_eq!(a.measure, b.measure);
        let c = coupled_marginal_samples(&spec).unwrap();
        let d = coupled_marginal_samples(&spec).unwrap();
        assert_eq!(c.exact, d.exact);
        assert_eq!(c.surrogate, d.surrogate);
    }
}
