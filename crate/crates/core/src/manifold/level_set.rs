use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::split_row_space;
use crate::tolerances::Tolerances;

/// Smooth equality constraint `f : R^n -> R^m` whose zero set is the manifold.
pub trait Constraint: Debug + Send + Sync {
    fn ambient_dim(&self) -> usize;

    fn codim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `m x n` Jacobian.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Hessian of each component. Defaults to central differences of the
    /// Jacobian.
    fn hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let n = self.ambient_dim();
        let m = self.codim();
        let h = Tolerances::default().fd_step * x.amax().max(1.0);
        let mut out = vec![DMatrix::zeros(n, n); m];
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let d = (self.jacobian(&xp)? - self.jacobian(&xm)?) / (2.0 * h);
            for (i, hess) in out.iter_mut().enumerate() {
                for k in 0..n {
                    hess[(k, j)] = d[(i, k)];
                }
            }
        }
        Ok(out.into_iter().map(|m| (&m + m.transpose()) * 0.5).collect())
    }

    /// Model-specific initial guess for the metric projection of `x`;
    /// `None` falls back to the caller's initializer.
    fn projection_seed(&self, _x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        Ok(None)
    }
}

/// Manifold given as the regular zero set of a [`Constraint`].
#[derive(Debug, Clone)]
pub struct LevelSet {
    constraint: Arc<dyn Constraint>,
    reach: f64,
    name: String,
    tolerances: Tolerances,
}

impl LevelSet {
    pub fn new(constraint: Arc<dyn Constraint>, reach: f64, name: impl Into<String>) -> Self {
        Self {
            constraint,
            reach,
            name: name.into(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn constraint(&self) -> &Arc<dyn Constraint> {
        &self.constraint
    }

    pub fn reach(&self) -> f64 {
        self.reach
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Metric projection of `x` starting from `init` (or the constraint's own
    /// seed when it provides one); fails outside the reach tube.
    pub fn project(&self, x: &DVector<f64>, init: &DVector<f64>) -> Result<DVector<f64>> {
        let seed = self.constraint.projection_seed(x)?.unwrap_or_else(|| init.clone());
        let y = newton_project(self.constraint.as_ref(), x, &seed, &self.tolerances)?;
        let dist = (x - &y).norm();
        if dist >= self.reach {
            return Err(Error::TubeViolation {
                distance: dist,
                reach: self.reach,
            });
        }
        Ok(y)
    }
}

/// Newton iteration on the Lagrange conditions of
/// `min ||y - x||^2 / 2  s.t.  f(y) = 0`, started at `init`. Converges when
/// `|f| <= projection_residual` and the tangential part of `x - y` is below
/// `normality_residual`.
pub fn newton_project(
    c: &dyn Constraint,
    x: &DVector<f64>,
    init: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let n = c.ambient_dim();
    let m = c.codim();
    let mut y = init.clone();
    // least-squares multiplier estimate at the start
    let mut lambda = multiplier_estimate(c, x, &y)?;
    let mut residual = f64::INFINITY;
    for _ in 0..tol.projection_max_iter {
        let f = c.value(&y)?;
        let j = c.jacobian(&y)?;
        let (_, tangent, sigma_min) = split_row_space(&j);
        if sigma_min <= tol.rank_sigma_min {
            return Err(Error::RankDeficient { sigma_min });
        }
        let tangential = (tangent.transpose() * (x - &y)).amax();
        residual = f.amax().max(tangential);
        if f.amax() <= tol.projection_residual && tangential <= tol.normality_residual {
            return Ok(y);
        }
        let hs = c.hessians(&y)?;
        let mut lag = DMatrix::identity(n, n);
        for (h, l) in hs.iter().zip(lambda.iter()) {
            lag += h * *l;
        }
        let grad = &y - x + j.transpose() * &lambda;
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&lag);
        kkt.view_mut((0, n), (n, m)).copy_from(&j.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&j);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        rhs.rows_mut(n, m).copy_from(&(-&f));
        let step = kkt.lu().solve(&rhs).ok_or(Error::NoConvergence {
            what: "projection",
            iterations: 0,
            residual,
        })?;
        let dy = step.rows(0, n).into_owned();
        let new_lambda = &lambda + step.rows(n, m);
        // backtrack on the KKT residual norm
        let merit = |yy: &DVector<f64>, ll: &DVector<f64>| -> Result<f64> {
            let jj = c.jacobian(yy)?;
            let g = yy - x + jj.transpose() * ll;
            Ok(g.norm_squared() + c.value(yy)?.norm_squared())
        };
        let base = grad.norm_squared() + f.norm_squared();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand_y = &y + &dy * t;
            let cand_l = &lambda * (1.0 - t) + &new_lambda * t;
            if let Ok(mv) = merit(&cand_y, &cand_l) {
                if mv < base || mv < 1e-28 {
                    y = cand_y;
                    lambda = cand_l;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            y += &dy;
            lambda = new_lambda;
        }
    }
    Err(Error::NoConvergence {
        what: "projection",
        iterations: tol.projection_max_iter,
        residual,
    })
}

fn multiplier_estimate(c: &dyn Constraint, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let j = c.jacobian(y)?;
    let jjt = &j * j.transpose();
    let rhs = &j * (x - y);
    Ok(jjt.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(c.codim())))
}
