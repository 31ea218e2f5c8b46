//! Embedded submanifolds: level-set constraints, metric projection,
//! retraction, charts with volume factors, and curvature/reach metadata.

mod level_set;
mod rounded_rect;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::AffineManifold;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{op_norm, split_row_space, sorted_eigen};
use crate::tolerances::Tolerances;

pub use level_set::{newton_project, Constraint, LevelSet};
pub use rounded_rect::{rounded_rect_sdf, RoundedRectBoundary, SdfEval};

/// Orthonormal frame of the tangent plane at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    /// Base point on the manifold (also the affine offset of the plane).
    pub base: DVector<f64>,
    /// Tangent basis `N`, `n x d`.
    pub tangent: DMatrix<f64>,
    /// Normal basis `S`, `n x (n - d)`.
    pub normal: DMatrix<f64>,
    /// `Pi = N N^T`.
    pub projector: DMatrix<f64>,
}

impl TangentFrame {
    /// Frame from an already orthonormal tangent basis.
    pub fn from_bases(base: DVector<f64>, tangent: DMatrix<f64>, normal: DMatrix<f64>) -> Self {
        let projector = &tangent * tangent.transpose();
        Self {
            base,
            tangent,
            normal,
            projector,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.tangent.ncols()
    }

    /// Tangent coordinates `N^T (x - base)`.
    pub fn coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tangent.transpose() * (x - &self.base)
    }

    /// Point `base + N v` on the tangent plane.
    pub fn lift(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.tangent * v
    }
}

/// Chart families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    /// Geodesic (arc-length) chart; spheres only.
    Exponential,
    /// Graph over the tangent plane; spheres only.
    Graph,
    /// `project(base + N v)`; any model.
    Projection,
}

/// Chart constants on a ball of tangent radius `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartConstants {
    pub kappa_psi: f64,
    pub kappa_j: f64,
    pub lipschitz: f64,
}

const CHART_SAFETY: f64 = 1.1;
const CURVATURE_SAFETY: f64 = 1.2;

/// A manifold model with the geometric services the inference code needs.
#[derive(Debug, Clone)]
pub enum ManifoldModel {
    Affine(AffineManifold),
    /// Sphere `{x : ||x - center|| = radius}`; the circle is the case `n = 2`.
    Sphere { center: DVector<f64>, radius: f64 },
    LevelSet(LevelSet),
}

/// Declarative manifold description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldSpec {
    /// `{x : S^T x = c}` with `S` given row-major as `n x m`.
    Affine { n: usize, s: Vec<f64>, c: Vec<f64> },
    Circle { radius: f64 },
    Sphere { dim: usize, radius: f64 },
    BoxBoundary {
        half_width: f64,
        half_height: f64,
        corner_radius: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<ManifoldModel> {
        match self {
            ManifoldSpec::Affine { n, s, c } => {
                if *n == 0 || s.len() % n != 0 {
                    return Err(Error::Config("affine S must have n * m entries".into()));
                }
                let m = s.len() / n;
                let s = DMatrix::from_row_slice(*n, m, s);
                AffineManifold::new(s, DVector::from_column_slice(c)).map(ManifoldModel::Affine)
            }
            ManifoldSpec::Circle { radius } => ManifoldModel::circle(*radius),
            ManifoldSpec::Sphere { dim, radius } => ManifoldModel::sphere(DVector::zeros(*dim), *radius),
            ManifoldSpec::BoxBoundary {
                half_width,
                half_height,
                corner_radius,
                offset,
            } => {
                let rr = RoundedRectBoundary::new(*half_width, *half_height, *corner_radius, *offset)?;
                let reach = rr.reach();
                Ok(ManifoldModel::LevelSet(LevelSet::new(Arc::new(rr), reach, "box-boundary")))
            }
        }
    }
}

impl ManifoldModel {
    /// Circle of the given radius about the origin of the plane.
    pub fn circle(radius: f64) -> Result<Self> {
        Self::sphere(DVector::zeros(2), radius)
    }

    pub fn sphere(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument("sphere radius must be positive".into()));
        }
        if center.len() < 2 {
            return Err(Error::InvalidArgument("sphere needs ambient dimension >= 2".into()));
        }
        Ok(ManifoldModel::Sphere { center, radius })
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldModel::Affine(a) => a.ambient_dim(),
            ManifoldModel::Sphere { center, .. } => center.len(),
            ManifoldModel::LevelSet(l) => l.constraint().ambient_dim(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    pub fn codim(&self) -> usize {
        match self {
            ManifoldModel::Affine(a) => a.codim(),
            ManifoldModel::Sphere { .. } => 1,
            ManifoldModel::LevelSet(l) => l.constraint().codim(),
        }
    }

    /// Reach `rho` (`f64::INFINITY` for flat models).
    pub fn reach(&self) -> f64 {
        match self {
            ManifoldModel::Affine(_) => f64::INFINITY,
            ManifoldModel::Sphere { radius, .. } => *radius,
            ManifoldModel::LevelSet(l) => l.reach(),
        }
    }

    /// Constraint value `f(x)`.
    pub fn constraint_value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.ambient_dim(), x.len())?;
        match self {
            ManifoldModel::Affine(a) => Ok(a.s().transpose() * x - a.c()),
            ManifoldModel::Sphere { center, radius } => {
                let d2 = (x - center).norm_squared();
                Ok(DVector::from_element(1, (d2 - radius * radius) / (2.0 * radius)))
            }
            ManifoldModel::LevelSet(l) => l.constraint().value(x),
        }
    }

    /// Constraint Jacobian `Df(x)`, `(n - d) x n`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.ambient_dim(), x.len())?;
        match self {
            ManifoldModel::Affine(a) => Ok(a.s().transpose()),
            ManifoldModel::Sphere { center, radius } => Ok(DMatrix::from_row_slice(1, x.len(), (x - center).as_slice()) / *radius),
            ManifoldModel::LevelSet(l) => l.constraint().jacobian(x),
        }
    }

    /// Hessians of each constraint component.
    pub fn hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        check_dim(self.ambient_dim(), x.len())?;
        let n = self.ambient_dim();
        match self {
            ManifoldModel::Affine(a) => Ok(vec![DMatrix::zeros(n, n); a.codim()]),
            ManifoldModel::Sphere { radius, .. } => Ok(vec![DMatrix::identity(n, n) / *radius]),
            ManifoldModel::LevelSet(l) => l.constraint().hessians(x),
        }
    }

    pub fn is_on_manifold(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.constraint_value(x).map(|f| f.amax() <= tol).unwrap_or(false)
    }

    pub fn tangent_frame(&self, base: &DVector<f64>) -> Result<TangentFrame> {
        self.tangent_frame_with(base, &Tolerances::default())
    }

    pub fn tangent_frame_with(&self, base: &DVector<f64>, tol: &Tolerances) -> Result<TangentFrame> {
        let f = self.constraint_value(base)?;
        if f.amax() > tol.on_manifold.max(1e-12 * base.amax()) {
            return Err(Error::InvalidArgument(format!(
                "frame base is off the manifold (|f| = {:e})",
                f.amax()
            )));
        }
        let j = self.jacobian(base)?;
        let (normal, tangent, sigma_min) = split_row_space(&j);
        if sigma_min <= tol.rank_sigma_min {
            return Err(Error::RankDeficient { sigma_min });
        }
        Ok(TangentFrame::from_bases(base.clone(), tangent, normal))
    }

    /// Metric projection onto the manifold.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.project_from(x, x)
    }

    /// Metric projection with an explicit initial iterate for iterative models.
    pub fn project_from(&self, x: &DVector<f64>, init: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.ambient_dim(), x.len())?;
        match self {
            ManifoldModel::Affine(a) => Ok(a.project(x)),
            ManifoldModel::Sphere { center, radius } => {
                let d = x - center;
                let norm = d.norm();
                if norm <= 1e-300 {
                    return Err(Error::ProjectionAtCenter);
                }
                Ok(center + d * (*radius / norm))
            }
            ManifoldModel::LevelSet(l) => l.project(x, init),
        }
    }

    /// Retraction `R(v)` at the frame base. Spheres use the exponential map,
    /// other models the projection retraction.
    pub fn retract(&self, frame: &TangentFrame, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(frame.intrinsic_dim(), v.len())?;
        match self {
            ManifoldModel::Sphere { .. } => self.sphere_exponential(frame, v),
            _ => {
                let y = frame.lift(v);
                self.project_from(&y, &y)
            }
        }
    }

    /// Retraction with radial clamping outside the ball of radius `r`.
    pub fn retract_clamped(&self, frame: &TangentFrame, v: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
        self.retract(frame, &clamp_radial(v, r))
    }

    /// Chart `Psi(v)` and its volume factor `J(v)`.
    pub fn chart(&self, frame: &TangentFrame, v: &DVector<f64>, kind: ChartKind) -> Result<(DVector<f64>, f64)> {
        check_dim(frame.intrinsic_dim(), v.len())?;
        match self {
            ManifoldModel::Affine(_) => Ok((frame.lift(v), 1.0)),
            ManifoldModel::Sphere { center, radius } => {
                let d = frame.intrinsic_dim() as f64;
                let norm = v.norm();
                match kind {
                    ChartKind::Exponential => {
                        if norm >= PI * radius {
                            return Err(Error::ChartRadiusExceeded {
                                norm,
                                max: PI * radius,
                            });
                        }
                        let t = norm / radius;
                        let j = if t < 1e-8 { 1.0 } else { (t.sin() / t).powf(d - 1.0) };
                        Ok((self.sphere_exponential(frame, v)?, j))
                    }
                    ChartKind::Graph => {
                        if norm >= *radius {
                            return Err(Error::ChartRadiusExceeded { norm, max: *radius });
                        }
                        let up = (&frame.base - center) / *radius;
                        let h = (radius * radius - norm * norm).sqrt();
                        let y = center + &frame.tangent * v + up * h;
                        Ok((y, radius / h))
                    }
                    ChartKind::Projection => self.projection_chart(frame, v),
                }
            }
            ManifoldModel::LevelSet(_) => match kind {
                ChartKind::Projection => self.projection_chart(frame, v),
                other => Err(Error::InvalidArgument(format!(
                    "{other:?} chart is only available on spheres"
                ))),
            },
        }
    }

    /// Chart with radial clamping outside the ball of radius `r`.
    pub fn chart_clamped(
        &self,
        frame: &TangentFrame,
        v: &DVector<f64>,
        kind: ChartKind,
        r: f64,
    ) -> Result<(DVector<f64>, f64)> {
        self.chart(frame, &clamp_radial(v, r), kind)
    }

    /// Chart used when none is requested explicitly.
    pub fn default_chart(&self) -> ChartKind {
        match self {
            ManifoldModel::Sphere { .. } => ChartKind::Exponential,
            _ => ChartKind::Projection,
        }
    }

    /// Forward-difference chart differential `D Psi(v)`, `n x d`.
    pub fn chart_differential(&self, frame: &TangentFrame, v: &DVector<f64>, kind: ChartKind) -> Result<DMatrix<f64>> {
        let h = Tolerances::default().fd_step * v.norm().max(1.0);
        let d = frame.intrinsic_dim();
        let (y0, _) = self.chart(frame, v, kind)?;
        let mut jac = DMatrix::zeros(frame.ambient_dim(), d);
        for i in 0..d {
            let mut vp = v.clone();
            vp[i] += h;
            let (yp, _) = self.chart(frame, &vp, kind)?;
            jac.set_column(i, &((yp - &y0) / h));
        }
        Ok(jac)
    }

    /// `(kappa_psi, kappa_j, L_psi)` on the ball of radius `r`. Exact values
    /// are returned where known (flat models, Lipschitz constant 1 of the
    /// exponential chart); fitted values carry a 1.1 safety factor.
    pub fn calibrate_chart_constants(
        &self,
        frame: &TangentFrame,
        r: f64,
        grid_size: usize,
        kind: ChartKind,
    ) -> Result<ChartConstants> {
        if grid_size < 8 {
            return Err(Error::InvalidArgument("chart calibration needs grid_size >= 8".into()));
        }
        if !(r > 0.0) {
            return Err(Error::InvalidArgument("chart radius must be positive".into()));
        }
        if let ManifoldModel::Affine(_) = self {
            return Ok(ChartConstants {
                kappa_psi: 0.0,
                kappa_j: 0.0,
                lipschitz: 1.0,
            });
        }
        let grid = ball_grid(frame.intrinsic_dim(), r, grid_size);
        let (mut kpsi, mut kj, mut lip) = (0.0_f64, 0.0_f64, 0.0_f64);
        for v in std::iter::once(DVector::zeros(frame.intrinsic_dim())).chain(grid) {
            let n2 = v.norm_squared();
            let (y, j) = self.chart(frame, &v, kind)?;
            if n2 > 0.0 {
                kpsi = kpsi.max(2.0 * (&y - frame.lift(&v)).norm() / n2);
                kj = kj.max(2.0 * j.ln().abs() / n2);
            }
            lip = lip.max(op_norm(&self.chart_differential(frame, &v, kind)?));
        }
        let exact_lipschitz = matches!(self, ManifoldModel::Sphere { .. }) && kind == ChartKind::Exponential;
        Ok(ChartConstants {
            kappa_psi: CHART_SAFETY * kpsi,
            kappa_j: CHART_SAFETY * kj,
            lipschitz: if exact_lipschitz { 1.0 } else { CHART_SAFETY * lip },
        })
    }

    /// Constant `kappa_R` of the quadratic retraction bound
    /// `||R(v) - (base + N v)|| <= kappa_R ||v||^2 / 2`.
    pub fn retraction_constant(&self, frame: &TangentFrame, r: f64) -> Result<f64> {
        match self {
            ManifoldModel::Affine(_) => Ok(0.0),
            ManifoldModel::Sphere { radius, .. } => Ok(1.0 / radius),
            ManifoldModel::LevelSet(_) => {
                let mut k = 0.0_f64;
                for v in ball_grid(frame.intrinsic_dim(), r, 16) {
                    let y = self.retract(frame, &v)?;
                    k = k.max(2.0 * (y - frame.lift(&v)).norm() / v.norm_squared());
                }
                Ok(CHART_SAFETY * k)
            }
        }
    }

    /// Upper bound on the second fundamental form over `M ∩ B(center, 2 radius)`.
    pub fn curvature_bound(&self, center: &DVector<f64>, radius: f64) -> Result<f64> {
        match self {
            ManifoldModel::Affine(_) => Ok(0.0),
            ManifoldModel::Sphere { radius: rs, .. } => Ok(1.0 / rs),
            ManifoldModel::LevelSet(_) => {
                let frame = self.tangent_frame(center)?;
                let mut best = self.shape_operator_norm(center)?;
                let mut found = 1;
                let d = frame.intrinsic_dim();
                for v in ball_grid(d, 2.0 * radius, 24) {
                    let Ok(y) = self.retract(&frame, &v) else { continue };
                    if (&y - center).norm() > 2.0 * radius {
                        continue;
                    }
                    best = best.max(self.shape_operator_norm(&y)?);
                    found += 1;
                }
                if found < 2 {
                    return Err(Error::InvalidArgument(
                        "curvature sampling found no on-manifold points".into(),
                    ));
                }
                Ok(CURVATURE_SAFETY * best)
            }
        }
    }

    /// `max_w ||N^T (sum_i w_i Hess f_i) N||_op / sigma_min(Df)` over unit
    /// weight vectors `w` drawn from a fixed direction set.
    pub fn shape_operator_norm(&self, y: &DVector<f64>) -> Result<f64> {
        let j = self.jacobian(y)?;
        let (_, tangent, sigma_min) = split_row_space(&j);
        if sigma_min <= Tolerances::default().rank_sigma_min {
            return Err(Error::RankDeficient { sigma_min });
        }
        let hs = self.hessians(y)?;
        let m = hs.len();
        let mut best = 0.0_f64;
        for w in unit_directions(m) {
            let combo = hs.iter().zip(w.iter()).fold(DMatrix::zeros(y.len(), y.len()), |acc, (h, wi)| acc + h * *wi);
            let red = tangent.transpose() * combo * &tangent;
            let (vals, _) = sorted_eigen(&red);
            let norm = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            best = best.max(norm / sigma_min);
        }
        Ok(best)
    }

    fn sphere_exponential(&self, frame: &TangentFrame, v: &DVector<f64>) -> Result<DVector<f64>> {
        let ManifoldModel::Sphere { center, radius } = self else {
            unreachable!("exponential map requested on a non-sphere")
        };
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(frame.base.clone());
        }
        let up = (&frame.base - center) / *radius;
        let dir = &frame.tangent * v / norm;
        let t = norm / radius;
        Ok(center + (up * t.cos() + dir * t.sin()) * *radius)
    }

    fn projection_chart(&self, frame: &TangentFrame, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let y = self.project_from(&frame.lift(v), &frame.lift(v))?;
        let d = frame.intrinsic_dim();
        if d == 0 {
            return Ok((y, 1.0));
        }
        // forward differences of the chart itself
        let h = Tolerances::default().fd_step * v.norm().max(1.0);
        let mut jac = DMatrix::zeros(frame.ambient_dim(), d);
        for i in 0..d {
            let mut vp = v.clone();
            vp[i] += h;
            let yp = self.project_from(&frame.lift(&vp), &y)?;
            jac.set_column(i, &((yp - &y) / h));
        }
        let det = (jac.transpose() * &jac).determinant().max(0.0);
        Ok((y, det.sqrt()))
    }
}

/// `v` if `||v|| <= r`, else `r v / ||v||`.
pub fn clamp_radial(v: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = v.norm();
    if n <= r {
        v.clone()
    } else {
        v * (r / n)
    }
}

/// Deterministic test points in the punctured ball of radius `r`: `grid_size`
/// radii times a direction set (both signs in 1-D, `grid_size` angles in 2-D,
/// signed coordinate and diagonal directions otherwise).
pub fn ball_grid(dim: usize, r: f64, grid_size: usize) -> Vec<DVector<f64>> {
    let dirs: Vec<DVector<f64>> = match dim {
        0 => return Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..grid_size)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / grid_size as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => unit_directions(dim),
    };
    let mut out = Vec::with_capacity(dirs.len() * grid_size);
    for i in 1..=grid_size {
        let rad = r * i as f64 / grid_size as f64;
        for d in &dirs {
            out.push(d * rad);
        }
    }
    out
}

/// Signed coordinate axes plus normalized signed pairwise diagonals.
fn unit_directions(dim: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(dim);
            e[i] = s;
            out.push(e);
        }
        for j in (i + 1)..dim {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0)] {
                let mut e = DVector::zeros(dim);
                e[i] = a;
                e[j] = b;
                out.push(e / 2f64.sqrt());
            }
        }
    }
    out
}
