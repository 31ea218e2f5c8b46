use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::level_set::Constraint;
use crate::error::{check_dim, Error, Result};

/// Signed distance to a rounded rectangle with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfEval {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub hessian: Matrix2<f64>,
}

/// Signed distance from `q` to the axis-aligned rectangle of half-extents
/// `(w, h)` whose corners are rounded with radius `rc`. Faces are linear,
/// corners radial; the gradient is undefined at the corner-arc centers.
pub fn rounded_rect_sdf(q: Vector2<f64>, w: f64, h: f64, rc: f64) -> Result<SdfEval> {
    let sx = if q.x < 0.0 { -1.0 } else { 1.0 };
    let sy = if q.y < 0.0 { -1.0 } else { 1.0 };
    let a = Vector2::new(q.x.abs() - (w - rc), q.y.abs() - (h - rc));
    let zero = Matrix2::zeros();
    if a.x > 0.0 && a.y > 0.0 {
        let n = a.norm();
        let u = Vector2::new(sx * a.x / n, sy * a.y / n);
        return Ok(SdfEval {
            value: n - rc,
            gradient: u,
            hessian: (Matrix2::identity() - u * u.transpose()) / n,
        });
    }
    let scale = w.max(h);
    if a.x.abs() <= 1e-15 * scale && a.y.abs() <= 1e-15 * scale {
        return Err(Error::DegenerateContact);
    }
    if a.x >= a.y {
        Ok(SdfEval {
            value: a.x - rc,
            gradient: Vector2::new(sx, 0.0),
            hessian: zero,
        })
    } else {
        Ok(SdfEval {
            value: a.y - rc,
            gradient: Vector2::new(0.0, sy),
            hessian: zero,
        })
    }
}

/// Level set `{x : sd(x) = offset}` of a rounded rectangle centered at the
/// origin: the box boundary itself for `offset = 0`, or the locus of contact
/// for a disk of radius `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundedRectBoundary {
    pub half_width: f64,
    pub half_height: f64,
    pub corner_radius: f64,
    pub offset: f64,
}

impl RoundedRectBoundary {
    pub fn new(half_width: f64, half_height: f64, corner_radius: f64, offset: f64) -> Result<Self> {
        if !(corner_radius > 0.0 && corner_radius < half_width.min(half_height)) {
            return Err(Error::InvalidArgument(
                "corner radius must be positive and below both half-extents".into(),
            ));
        }
        if !(offset >= 0.0) {
            return Err(Error::InvalidArgument("offset must be nonnegative".into()));
        }
        Ok(Self {
            half_width,
            half_height,
            corner_radius,
            offset,
        })
    }

    /// Curvature radius of the offset corner arcs, which bounds the reach.
    pub fn reach(&self) -> f64 {
        self.corner_radius + self.offset
    }

    pub fn sdf(&self, x: &DVector<f64>) -> Result<SdfEval> {
        check_dim(2, x.len())?;
        rounded_rect_sdf(Vector2::new(x[0], x[1]), self.half_width, self.half_height, self.corner_radius)
    }
}

impl Constraint for RoundedRectBoundary {
    fn ambient_dim(&self) -> usize {
        2
    }

    fn codim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.sdf(x)?.value - self.offset))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = self.sdf(x)?.gradient;
        Ok(DMatrix::from_row_slice(1, 2, &[g.x, g.y]))
    }

    fn hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let h = self.sdf(x)?.hessian;
        Ok(vec![DMatrix::from_row_slice(2, 2, &[h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]])])
    }

    /// Level sets are parallel curves, so one step along the gradient lands
    /// on the nearest point.
    fn projection_seed(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let s = self.sdf(x)?;
        let g = DVector::from_vec(vec![s.gradient.x, s.gradient.y]);
        Ok(Some(x - g * (s.value - self.offset)))
    }
}
