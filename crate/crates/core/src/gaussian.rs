//! Ambient Gaussian laws, weighted sample clouds, and the moment and tail
//! formulas the stability bounds are assembled from.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, sorted_eigen, symmetrize};
use crate::rng;
use crate::tolerances::Tolerances;

/// One-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.326_347_874_040_841;

/// A (possibly degenerate) Gaussian `N(mean, cov)`.
///
/// The covariance is symmetrized on construction and factored once by a
/// spectral decomposition; eigenvalues below `1e-12 * lambda_max` are clamped
/// to zero so rank-deficient laws from affine marginalization are accepted.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerances(mean, cov, &Tolerances::default())
    }

    pub fn with_tolerances(mean: DVector<f64>, cov: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument("Gaussian dimension must be positive".into()));
        }
        check_dim(n, cov.nrows())?;
        check_dim(n, cov.ncols())?;
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean or covariance".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e3 * tol.symmetry_rel * scale + f64::EPSILON * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let cov = symmetrize(&cov);
        let (mut eigenvalues, eigenvectors) = sorted_eigen(&cov);
        let top = eigenvalues[0].max(0.0);
        let min = eigenvalues[n - 1];
        if min < -tol.psd_reject_rel * top.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        for v in eigenvalues.iter_mut() {
            if *v <= tol.psd_clamp_rel * top {
                *v = 0.0;
            }
        }
        let factor = &eigenvectors * DMatrix::from_diagonal(&eigenvalues.map(f64::sqrt));
        Ok(Self {
            mean,
            cov,
            eigenvalues,
            eigenvectors,
            factor,
        })
    }

    /// Isotropic `N(mean, sigma^2 I)`.
    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * (sigma * sigma))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Clamped eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `||cov||_op`.
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `mean - point`.
    pub fn offset_to(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), point.len())?;
        Ok(&self.mean - point)
    }

    /// Precision `cov^{-1}`; fails for singular covariances.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let min = self.lambda_min();
        if min <= Tolerances::default().precision_min_rel * self.lambda_max() || min <= 0.0 {
            return Err(Error::SingularCovariance { min_eigenvalue: min });
        }
        let inv = DMatrix::from_diagonal(&self.eigenvalues.map(|v| 1.0 / v));
        Ok(symmetrize(&(&self.eigenvectors * inv * self.eigenvectors.transpose())))
    }

    /// `||cov^{-1}||_op = 1 / lambda_min`.
    pub fn precision_norm(&self) -> Result<f64> {
        self.precision()?;
        Ok(1.0 / self.lambda_min())
    }

    /// Log density; requires a nonsingular covariance.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let omega = self.precision()?;
        let d = x - &self.mean;
        let quad = d.dot(&(&omega * &d));
        let logdet: f64 = self.eigenvalues.iter().map(|v| v.ln()).sum();
        let n = self.dim() as f64;
        Ok(-0.5 * (quad + logdet + n * (2.0 * std::f64::consts::PI).ln()))
    }

    /// `count` i.i.d. draws; draw `i` uses the stream keyed by `(seed, i)`.
    pub fn sample(&self, count: usize, seed: u64) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.sample_points(count, seed))
            .expect("Gaussian draws share one dimension")
    }

    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        (0..count)
            .into_par_iter()
            .map(|i| self.draw(&mut rng::stream(seed, i as u64)))
            .collect()
    }

    pub(crate) fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_vec(rng::standard_normals(rng, self.dim()));
        &self.mean + &self.factor * z
    }

    /// `E||X - point||^4`, exactly.
    pub fn fourth_moment_about(&self, point: &DVector<f64>) -> Result<f64> {
        let delta = self.offset_to(point)?;
        Ok(fourth_moment(&delta, &self.cov))
    }

    /// Upper estimate of `E[||X - point||^4 1{||X - point|| <= r}]`: the
    /// minimum of the untruncated closed form, `r^4`, and a Monte Carlo
    /// estimate inflated by its one-sided 99% confidence margin.
    pub fn truncated_fourth_moment(
        &self,
        point: &DVector<f64>,
        r: f64,
        mc_budget: usize,
        seed: u64,
    ) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument("truncation radius must be positive".into()));
        }
        if mc_budget < 100 {
            return Err(Error::InvalidArgument(format!(
                "Monte Carlo budget {mc_budget} is below the minimum of 100"
            )));
        }
        let closed = self.fourth_moment_about(point)?;
        let values: Vec<f64> = (0..mc_budget)
            .into_par_iter()
            .map(|i| {
                let x = self.draw(&mut rng::stream(seed, i as u64));
                let d2 = (x - point).norm_squared();
                if d2 <= r * r {
                    d2 * d2
                } else {
                    0.0
                }
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let upper = mean + Z_99 * (var / n).sqrt();
        Ok(closed.min(r.powi(4)).min(upper))
    }

    /// Concentration bound on `P(||X - point|| > r)`.
    pub fn tail_prob_bound(&self, point: &DVector<f64>, r: f64) -> Result<f64> {
        let delta = self.offset_to(point)?;
        Ok(gaussian_tail_bound(delta.norm(), self.lambda_max(), self.dim(), r))
    }

    /// `||delta|| + sqrt(lambda_max) (sqrt(n) + t)`, the radius at which the
    /// tail bound equals `exp(-t^2 / 2)`.
    pub fn localization_radius(&self, point: &DVector<f64>, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument("t must be positive".into()));
        }
        let delta = self.offset_to(point)?;
        Ok(delta.norm() + self.lambda_max().sqrt() * ((self.dim() as f64).sqrt() + t))
    }
}

/// `E||delta + xi||^4` for `xi ~ N(0, cov)`.
pub fn fourth_moment(delta: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d2 = delta.norm_squared();
    let tr = cov.trace();
    d2 * d2 + 2.0 * d2 * tr + 4.0 * delta.dot(&(cov * delta)) + tr * tr + 2.0 * cov.norm_squared()
}

/// `exp(-((r - offset)/sqrt(lambda_max) - sqrt(dim))_+^2 / 2)`, or 1 when
/// `r <= offset`.
pub fn gaussian_tail_bound(offset: f64, lambda_max: f64, dim: usize, r: f64) -> f64 {
    if r <= offset {
        return 1.0;
    }
    if lambda_max <= 0.0 {
        return 0.0;
    }
    let excess = ((r - offset) / lambda_max.sqrt() - (dim as f64).sqrt()).max(0.0);
    (-0.5 * excess * excess).exp().clamp(0.0, 1.0)
}

/// Closed-form `W2` between two Gaussians.
pub fn gaussian_w2(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let mean_gap = (a.mean() - b.mean()).norm_squared();
    let sb = psd_sqrt(b.cov())?;
    let inner = psd_sqrt(&symmetrize(&(&sb * a.cov() * &sb)))?;
    let bures = a.cov().trace() + b.cov().trace() - 2.0 * inner.trace();
    Ok((mean_gap + bures.max(0.0)).sqrt())
}

/// Weighted point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        let w = if n == 0 { Vec::new() } else { vec![1.0 / n as f64; n] };
        Self::weighted(points, w)
    }

    /// Weights are normalized to sum to one; they must be nonnegative.
    pub fn weighted(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), weights.len())?;
        if let Some(first) = points.first() {
            let dim = first.len();
            if let Some(bad) = points.iter().find(|p| p.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bad.len(),
                });
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !points.is_empty() && total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.len() as f64;
        self.weights.iter().all(|w| (w * n - 1.0).abs() < 1e-9)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.points
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.dim()), |acc, (p, w)| acc + p * *w)
    }

    /// Uncentered second moment `E[X X^T]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.points
            .iter()
            .zip(&self.weights)
            .fold(DMatrix::zeros(d, d), |acc, (p, w)| acc + p * p.transpose() * *w)
    }

    /// Weighted covariance (population normalization).
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        self.second_moment() - &m * m.transpose()
    }

    /// `E||X - center||^p`.
    pub fn moment_about(&self, center: &DVector<f64>, p: i32) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - center).norm().powi(p))
            .sum()
    }

    /// First `n` points as a uniform measure.
    pub fn head(&self, n: usize) -> Result<Self> {
        Self::uniform(self.points.iter().take(n).cloned().collect())
    }

    /// Dump as CSV with header `x_1,...,x_n,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim())
            .map(|i| format!("x_{i}"))
            .chain(std::iter::once("weight".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (p, w) in self.points.iter().zip(&self.weights) {
            let row: Vec<String> = p.iter().chain(std::iter::once(w)).map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn degenerate_covariance_samples_the_mean() {
        let g = Gaussian::new(dv(&[0.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let m = g.sample(5, 1);
        assert_eq!(m.len(), 5);
        assert!(m.points().iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Gaussian::isotropic(dv(&[1.0, -1.0]), 0.3).unwrap();
        assert_eq!(g.sample(100, 42), g.sample(100, 42));
        assert_ne!(g.sample(100, 42), g.sample(100, 43));
    }

    #[test]
    fn sampling_independent_of_thread_count() {
        let g = Gaussian::isotropic(dv(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        let par = g.sample(500, 9);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| g.sample(500, 9));
        assert_eq!(par, serial);
    }

    #[test]
    fn standard_normal_sample_mean() {
        let g = Gaussian::isotropic(dv(&[0.0, 0.0]), 1.0).unwrap();
        let m = g.sample(100_000, 3).mean();
        // 3 / sqrt(count)
        assert!(m.iter().all(|v| v.abs() < 0.0095), "{m}");
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            Gaussian::new(dv(&[0.0, 0.0]), cov),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn precision_requires_full_rank() {
        let g = Gaussian::new(dv(&[0.0, 0.0]), DMatrix::from_diagonal(&dv(&[1.0, 0.0]))).unwrap();
        assert!(matches!(g.precision(), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn fourth_moment_closed_forms() {
        let g = Gaussian::isotropic(dv(&[0.0, 0.0]), 1.0).unwrap();
        assert!((g.fourth_moment_about(&dv(&[0.0, 0.0])).unwrap() - 8.0).abs() < 1e-12);
        let g = Gaussian::new(dv(&[0.0, 0.0]), DMatrix::from_diagonal(&dv(&[1.0, 0.0]))).unwrap();
        assert!((g.fourth_moment_about(&dv(&[0.0, 0.0])).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_fourth_moment_limits() {
        let g = Gaussian::isotropic(dv(&[0.3, 0.0]), 0.2).unwrap();
        let p = dv(&[0.0, 0.0]);
        let full = g.fourth_moment_about(&p).unwrap();
        let big = g.truncated_fourth_moment(&p, 1e6, 20_000, 5).unwrap();
        assert!((big - full).abs() / full < 0.03, "{big} vs {full}");
        let tiny = g.truncated_fourth_moment(&p, 1e-9, 1000, 5).unwrap();
        assert!(tiny <= 1e-36);
        assert!(g.truncated_fourth_moment(&p, 1.0, 99, 5).is_err());
    }

    #[test]
    fn truncated_fourth_moment_small_isotropic() {
        // (tr S)^2 + 2 ||S||_F^2 with S = 0.01 I_2
        let g = Gaussian::isotropic(dv(&[0.0, 0.0]), 0.1).unwrap();
        let v = g.truncated_fourth_moment(&dv(&[0.0, 0.0]), 1.0, 10_000, 2).unwrap();
        assert!((v - 0.0008).abs() / 0.0008 < 0.01, "{v}");
    }

    #[test]
    fn tail_bound_at_localization_radius() {
        let g = Gaussian::isotropic(dv(&[0.2, 0.0]), 0.2).unwrap();
        let p = dv(&[0.0, 0.0]);
        let r = g.localization_radius(&p, 3.0).unwrap();
        assert!((r - (0.2 + 0.2 * (2f64.sqrt() + 3.0))).abs() < 1e-12);
        assert!((r - 1.0828).abs() < 1e-4);
        let b = g.tail_prob_bound(&p, r).unwrap();
        assert!((b - (-4.5f64).exp()).abs() < 1e-12);
        assert_eq!(g.tail_prob_bound(&p, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn localization_radius_one_dimensional() {
        let g = Gaussian::isotropic(dv(&[0.0]), 1.0).unwrap();
        assert!((g.localization_radius(&dv(&[0.0]), 2.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_w2_closed_forms() {
        let a = Gaussian::isotropic(dv(&[0.0]), 1.0).unwrap();
        let b = Gaussian::isotropic(dv(&[2.5]), 1.0).unwrap();
        let c = Gaussian::isotropic(dv(&[0.0]), 3.0).unwrap();
        assert!(gaussian_w2(&a, &a).unwrap() < 1e-7);
        assert!((gaussian_w2(&a, &b).unwrap() - 2.5).abs() < 1e-12);
        assert!((gaussian_w2(&a, &c).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_measure_rejects_mixed_dimensions() {
        assert!(EmpiricalMeasure::uniform(vec![dv(&[1.0]), dv(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn csv_dump_has_header() {
        let m = EmpiricalMeasure::uniform(vec![dv(&[1.0, 2.0]), dv(&[3.0, 4.0])]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x_1,x_2,weight"));
        assert_eq!(text.lines().count(), 3);
    }
}
