//! Closed-form Gaussian marginalization and conditioning on affine subspaces
//! and on tangent planes.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{spd_inverse, split_row_space, symmetrize};
use crate::manifold::TangentFrame;
use crate::tolerances::Tolerances;

/// Affine subspace `{x : S^T x = c}` with `S` of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineManifold {
    s: DMatrix<f64>,
    c: DVector<f64>,
    x0: DVector<f64>,
    tangent: DMatrix<f64>,
    normal: DMatrix<f64>,
    projector: DMatrix<f64>,
}

impl AffineManifold {
    pub fn new(s: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = s.nrows();
        let m = s.ncols();
        check_dim(m, c.len())?;
        if m > n {
            return Err(Error::InvalidArgument("more constraints than ambient dimensions".into()));
        }
        let (normal, tangent, sigma_min) = split_row_space(&s.transpose());
        if m > 0 && sigma_min <= Tolerances::default().rank_sigma_min {
            return Err(Error::RankDeficient { sigma_min });
        }
        let x0 = if m == 0 {
            DVector::zeros(n)
        } else {
            &s * spd_inverse(&(s.transpose() * &s))? * &c
        };
        let projector = &tangent * tangent.transpose();
        Ok(Self {
            s,
            c,
            x0,
            tangent,
            normal,
            projector,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn codim(&self) -> usize {
        self.s.ncols()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Minimum-norm point `S (S^T S)^{-1} c`.
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn tangent(&self) -> &DMatrix<f64> {
        &self.tangent
    }

    pub fn normal(&self) -> &DMatrix<f64> {
        &self.normal
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// Orthogonal projection `Pi x + (I - Pi) x0`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projector * (x - &self.x0) + &self.x0
    }

    /// Frame at `base` (projected onto the subspace first).
    pub fn frame_at(&self, base: &DVector<f64>) -> TangentFrame {
        TangentFrame::from_bases(self.project(base), self.tangent.clone(), self.normal.clone())
    }
}

/// Pushforward of `g` under orthogonal projection onto `a`:
/// mean `Pi mu + (I - Pi) x0`, covariance `Pi Sigma Pi^T`.
pub fn marginalize_affine(g: &Gaussian, a: &AffineManifold) -> Result<Gaussian> {
    check_dim(a.ambient_dim(), g.dim())?;
    let pi = a.projector();
    let mean = a.project(g.mean());
    Gaussian::new(mean, symmetrize(&(pi * g.cov() * pi.transpose())))
}

/// Conditioning of `g` on `a` (restriction of the density, renormalized):
/// `Sigma_c = N (N^T Omega N)^{-1} N^T`, `mu_c = x0 + Sigma_c Omega (mu - x0)`.
pub fn condition_affine(g: &Gaussian, a: &AffineManifold) -> Result<Gaussian> {
    check_dim(a.ambient_dim(), g.dim())?;
    let omega = g.precision()?;
    let n = a.tangent();
    if n.ncols() == 0 {
        let dim = a.ambient_dim();
        return Gaussian::new(a.x0().clone(), DMatrix::zeros(dim, dim));
    }
    let inner = spd_inverse(&(n.transpose() * &omega * n))?;
    let cov = symmetrize(&(n * inner * n.transpose()));
    let mean = a.x0() + &cov * &omega * (g.mean() - a.x0());
    Gaussian::new(mean, cov)
}

/// Tangent-coordinate law `Q_T = N(Sigma_T N^T Omega delta, (N^T Omega N)^{-1})`
/// with `delta = mu - base`.
pub fn condition_tangent_coords(g: &Gaussian, frame: &TangentFrame) -> Result<Gaussian> {
    check_dim(frame.ambient_dim(), g.dim())?;
    if frame.intrinsic_dim() == 0 {
        return Err(Error::InvalidArgument("tangent law of a zero-dimensional manifold".into()));
    }
    let omega = g.precision()?;
    let n = &frame.tangent;
    let sigma_t = spd_inverse(&(n.transpose() * &omega * n))?;
    let delta = g.mean() - &frame.base;
    let m_t = &sigma_t * n.transpose() * &omega * delta;
    Gaussian::new(m_t, sigma_t)
}

/// Ambient degenerate Gaussian `N(base + N m, N C N^T)`.
pub fn lift_tangent_law(q: &Gaussian, frame: &TangentFrame) -> Result<Gaussian> {
    check_dim(frame.intrinsic_dim(), q.dim())?;
    let n = &frame.tangent;
    Gaussian::new(frame.lift(q.mean()), symmetrize(&(n * q.cov() * n.transpose())))
}

/// Log density of a lifted tangent law at `x = base + N v`, in tangent
/// coordinates (density with respect to Lebesgue measure on the plane).
pub fn tangent_log_density(q: &Gaussian, frame: &TangentFrame, x: &DVector<f64>) -> Result<f64> {
    q.log_density(&frame.coords(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn x_axis() -> AffineManifold {
        AffineManifold::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), dv(&[0.0])).unwrap()
    }

    #[test]
    fn marginalize_onto_coordinate_line() {
        let g = Gaussian::isotropic(dv(&[1.0, 2.0]), 1.0).unwrap();
        let m = marginalize_affine(&g, &x_axis()).unwrap();
        assert!((m.mean() - dv(&[1.0, 0.0])).norm() < 1e-15);
        assert!((m.cov() - DMatrix::from_diagonal(&dv(&[1.0, 0.0]))).norm() < 1e-15);
    }

    #[test]
    fn condition_bivariate_classical() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let g = Gaussian::new(dv(&[0.0, 1.0]), cov).unwrap();
        let c = condition_affine(&g, &x_axis()).unwrap();
        assert!((c.mean() - dv(&[-0.5, 0.0])).norm() < 1e-12);
        assert!((c.cov()[(0, 0)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn isotropic_conditioning_is_projection() {
        let a = AffineManifold::new(DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]), dv(&[1.0])).unwrap();
        let g = Gaussian::isotropic(dv(&[0.3, -0.2, 1.0]), 1.0).unwrap();
        let c = condition_affine(&g, &a).unwrap();
        assert!((c.cov() - a.projector()).norm() < 1e-12);
        assert!((c.mean() - a.project(g.mean())).norm() < 1e-12);
    }

    #[test]
    fn full_codimension_is_point_mass() {
        let a = AffineManifold::new(DMatrix::identity(2, 2), dv(&[1.0, 2.0])).unwrap();
        let g = Gaussian::isotropic(dv(&[0.0, 0.0]), 1.0).unwrap();
        let c = condition_affine(&g, &a).unwrap();
        assert_eq!(c.cov().norm(), 0.0);
        assert!((c.mean() - dv(&[1.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn circle_tangent_law() {
        let frame = TangentFrame::from_bases(
            dv(&[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        );
        let g = Gaussian::new(dv(&[1.2, 0.0]), DMatrix::from_diagonal(&dv(&[0.04, 0.01]))).unwrap();
        let q = condition_tangent_coords(&g, &frame).unwrap();
        assert!((q.cov()[(0, 0)] - 0.01).abs() < 1e-15);
        assert!(q.mean()[0].abs() < 1e-15);
    }

    #[test]
    fn singular_covariance_cannot_condition() {
        let g = Gaussian::new(dv(&[0.0, 0.0]), DMatrix::from_diagonal(&dv(&[1.0, 0.0]))).unwrap();
        assert!(matches!(condition_affine(&g, &x_axis()), Err(Error::SingularCovariance { .. })));
    }

    fn random_spd(n: usize, entries: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_iterator(n, n, entries.iter().copied().take(n * n));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.2
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn affine_identities(
            n in 2usize..=5,
            raw in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let m = 1 + (raw[0].abs() * 10.0) as usize % (n - 1);
            let s = DMatrix::from_iterator(n, m, raw[1..].iter().copied().take(n * m));
            let c = DVector::from_iterator(m, raw[30..].iter().copied().take(m));
            let Ok(a) = AffineManifold::new(s, c) else { return Ok(()) };
            let cov = random_spd(n, &raw[35..]);
            let mean = DVector::from_iterator(n, raw[20..].iter().copied().take(n));
            let g = Gaussian::new(mean, cov).unwrap();

            // S^T x0 = c and S^T N = 0
            prop_assert!((a.s().transpose() * a.x0() - a.c()).amax() < 1e-10);
            prop_assert!((a.s().transpose() * a.tangent()).amax() < 1e-10);

            // marginalization is idempotent and rank-limited
            let marg = marginalize_affine(&g, &a).unwrap();
            let twice = marginalize_affine(&marg, &a).unwrap();
            prop_assert!((marg.cov() - twice.cov()).amax() < 1e-12);
            prop_assert!((marg.mean() - twice.mean()).amax() < 1e-12);
            let rank = marg.eigenvalues().iter().filter(|v| **v > 0.0).count();
            prop_assert!(rank <= a.intrinsic_dim());

            // conditioning shrinks tangent uncertainty
            let cond = condition_affine(&g, &a).unwrap();
            let nt = a.tangent();
            let diff = nt.transpose() * g.cov() * nt - nt.transpose() * cond.cov() * nt;
            prop_assert!(crate::linalg::lambda_min(&diff) > -1e-10);

            // conditioning equals the lifted tangent law on the plane
            let frame = a.frame_at(g.mean());
            let lifted = lift_tangent_law(&condition_tangent_coords(&g, &frame).unwrap(), &frame).unwrap();
            prop_assert!((lifted.cov() - cond.cov()).amax() < 1e-10);
            prop_assert!((lifted.mean() - cond.mean()).amax() < 1e-10);
        }

        #[test]
        fn isotropic_marginal_equals_conditional(sigma in 0.05f64..3.0, x in -2.0f64..2.0) {
            let a = AffineManifold::new(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]), dv(&[x])).unwrap();
            let g = Gaussian::isotropic(dv(&[0.4, x, -0.3]), sigma).unwrap();
            let m = marginalize_affine(&g, &a).unwrap();
            let c = condition_affine(&g, &a).unwrap();
            prop_assert!((m.cov() - c.cov()).amax() < 1e-10 * sigma * sigma);
            prop_assert!((m.mean() - c.mean()).amax() < 1e-10);
        }
    }
}
