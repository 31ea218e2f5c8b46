//! Planar pushing: a box pushed by a circular probe along a known path, with
//! one contact constraint per pose.

mod diagnostics;
mod experiment;
mod solver;

pub use diagnostics::{
    directional_stress, step_diagnostics, trajectory_diagnostics, StepDiagnostics, StressMode, StressRow,
    TrajectorySummary,
};
pub use experiment::{diagnostics_table, run_pushing, stress_table, PushingConfig, PushingOutput};
pub use solver::{block_tridiagonal_selected_inverse, simulate_and_solve, solve_constrained_gn, TrajectorySolution};

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{newton_project, rounded_rect_sdf, Constraint};
use crate::rng;
use crate::tolerances::Tolerances;
use crate::wasserstein::wrap_angle;

/// Planar pose `(x, y, theta)`.
pub type Pose = Vector3<f64>;

/// Box and probe shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactGeometry {
    pub half_width: f64,
    pub half_height: f64,
    pub corner_radius: f64,
    pub probe_radius: f64,
}

impl Default for ContactGeometry {
    fn default() -> Self {
        Self {
            half_width: 0.2,
            half_height: 1.0,
            corner_radius: 0.02,
            probe_radius: 0.1,
        }
    }
}

/// Benchmark configuration. The probe path is generated from a constant
/// body twist of the box and a probe sliding linearly along the `+x` face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushingProblem {
    pub n_steps: usize,
    pub geometry: ContactGeometry,
    /// Diagonal of the odometry noise covariance `(m^2, m^2, rad^2)`.
    pub q_diag: [f64; 3],
    /// Box twist per step in its own frame `(dx, dy, dtheta)`.
    pub body_twist: [f64; 3],
    /// Probe contact height in the box frame at the first and last step.
    pub probe_y_start: f64,
    pub probe_y_end: f64,
    pub initial_pose: [f64; 3],
    /// When false the contact factors are dropped.
    pub contacts: bool,
    pub seed: u64,
}

impl Default for PushingProblem {
    fn default() -> Self {
        Self {
            n_steps: 50,
            geometry: ContactGeometry::default(),
            q_diag: [0.03 * 0.03, 0.03 * 0.03, 0.01 * 0.01],
            body_twist: [-0.02, 0.0, 0.005],
            probe_y_start: -0.6,
            probe_y_end: 0.6,
            initial_pose: [0.0, 0.0, 0.0],
            contacts: true,
            seed: 1,
        }
    }
}

impl PushingProblem {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::InvalidArgument("need at least two poses".into()));
        }
        if !self.q_diag.iter().all(|q| *q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidArgument("odometry noise variances must be nonnegative".into()));
        }
        let g = &self.geometry;
        if !(g.probe_radius > 0.0) {
            return Err(Error::InvalidArgument("probe radius must be positive".into()));
        }
        if !(g.corner_radius > 0.0 && g.corner_radius < g.half_width.min(g.half_height)) {
            return Err(Error::InvalidArgument(
                "corner radius must be positive and below both half-extents".into(),
            ));
        }
        Ok(())
    }

    pub fn noise_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.q_diag))
    }

    /// Probe contact height in the box frame at step `k`.
    pub fn probe_height(&self, k: usize) -> f64 {
        let t = k as f64 / (self.n_steps - 1) as f64;
        self.probe_y_start + (self.probe_y_end - self.probe_y_start) * t
    }
}

/// Ground truth and odometry of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: Vec<Pose>,
    pub probes: Vec<Vector2<f64>>,
    /// `u_k` measures `x_{k+1} - x_k`, angle wrapped.
    pub odometry: Vec<Vector3<f64>>,
}

fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Integrates the body twist, places the probe on the contact offset of the
/// `+x` face, and draws wrapped odometry noise from `N(0, Q)`.
pub fn simulate(problem: &PushingProblem) -> Result<Simulation> {
    problem.validate()?;
    let g = &problem.geometry;
    let tw = problem.body_twist;
    let mut truth = Vec::with_capacity(problem.n_steps);
    let mut x = Pose::from(problem.initial_pose);
    x[2] = wrap_angle(x[2]);
    truth.push(x);
    for _ in 1..problem.n_steps {
        let dp = rot(x[2]) * Vector2::new(tw[0], tw[1]);
        x = Pose::new(x[0] + dp.x, x[1] + dp.y, wrap_angle(x[2] + tw[2]));
        truth.push(x);
    }
    let reach_y = g.half_height - g.corner_radius;
    let mut probes = Vec::with_capacity(problem.n_steps);
    for (k, pose) in truth.iter().enumerate() {
        let yb = problem.probe_height(k);
        if yb.abs() > reach_y {
            return Err(Error::InfeasiblePath {
                step: k,
                reason: format!("probe height {yb} leaves the flat face |y| <= {reach_y}"),
            });
        }
        let pc = Vector2::new(pose[0], pose[1]) + rot(pose[2]) * Vector2::new(g.half_width + g.probe_radius, yb);
        let c = contact_constraint(pose, &pc, g)?.value;
        if c.abs() > 1e-10 {
            return Err(Error::InfeasiblePath {
                step: k,
                reason: format!("contact residual {c:e}"),
            });
        }
        probes.push(pc);
    }
    let sd = Vector3::from(problem.q_diag).map(f64::sqrt);
    let odometry = (0..problem.n_steps - 1)
        .map(|k| {
            let z = rng::standard_normals(&mut rng::stream(problem.seed, k as u64), 3);
            let d = truth[k + 1] - truth[k];
            Vector3::new(d[0] + sd[0] * z[0], d[1] + sd[1] * z[1], wrap_angle(d[2] + sd[2] * z[2]))
        })
        .collect();
    Ok(Simulation { truth, probes, odometry })
}

/// Contact constraint value with exact first and second derivatives in the
/// pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEval {
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
}

/// `c(x) = sd(R(theta)^T (pc - p)) - r_p` for the rounded box.
pub fn contact_constraint(pose: &Pose, probe: &Vector2<f64>, g: &ContactGeometry) -> Result<ContactEval> {
    if !pose.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("pose must be finite".into()));
    }
    let (s, c) = pose[2].sin_cos();
    let dx = probe.x - pose[0];
    let dy = probe.y - pose[1];
    let q = Vector2::new(c * dx + s * dy, -s * dx + c * dy);
    let e = rounded_rect_sdf(q, g.half_width, g.half_height, g.corner_radius)?;
    // dq/d(p, theta)
    let jq = nalgebra::Matrix2x3::new(-c, -s, q.y, s, -c, -q.x);
    let gradient = jq.transpose() * e.gradient;
    let mut hessian = jq.transpose() * e.hessian * jq;
    let (gx, gy) = (e.gradient.x, e.gradient.y);
    // sum_i d sd/dq_i * Hess(q_i)
    hessian[(2, 2)] += -gx * q.x - gy * q.y;
    let cross = Vector2::new(gx * s + gy * c, -gx * c + gy * s);
    for i in 0..2 {
        hessian[(i, 2)] += cross[i];
        hessian[(2, i)] += cross[i];
    }
    Ok(ContactEval {
        value: e.value - g.probe_radius,
        gradient,
        hessian,
    })
}

/// Contact constraint of one pose against a fixed probe center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseContact {
    pub probe: Vector2<f64>,
    pub geometry: ContactGeometry,
}

impl PoseContact {
    pub fn eval(&self, x: &DVector<f64>) -> Result<ContactEval> {
        crate::error::check_dim(3, x.len())?;
        contact_constraint(&Pose::new(x[0], x[1], x[2]), &self.probe, &self.geometry)
    }

    fn value_at(&self, p: &Vector2<f64>, theta: f64) -> Result<f64> {
        Ok(contact_constraint(&Pose::new(p.x, p.y, theta), &self.probe, &self.geometry)?.value)
    }

    /// Squared distance to the constraint set restricted to angle `theta`.
    fn angular_objective(&self, p: &Vector2<f64>, theta0: f64, theta: f64) -> Result<f64> {
        let v = self.value_at(p, theta)?;
        Ok(v * v + (theta - theta0) * (theta - theta0))
    }

    /// Euclidean projection in `(x, y, theta)`: a bracketed search over the
    /// angle within `|c|` of the start, a normal correction of the position,
    /// then a Newton polish on the Lagrange conditions.
    pub fn project(&self, x: &Pose, tol: &Tolerances) -> Result<Pose> {
        let p0 = Vector2::new(x[0], x[1]);
        let th0 = x[2];
        let c0 = self.value_at(&p0, th0)?;
        let half = c0.abs() + 1e-12;
        const GRID: usize = 201;
        let mut best = (f64::INFINITY, 0usize);
        let thetas: Vec<f64> = (0..GRID)
            .map(|i| th0 - half + 2.0 * half * i as f64 / (GRID - 1) as f64)
            .collect();
        for (i, t) in thetas.iter().enumerate() {
            if let Ok(d) = self.angular_objective(&p0, th0, *t) {
                if d < best.0 {
                    best = (d, i);
                }
            }
        }
        if !best.0.is_finite() {
            return Err(Error::DegenerateContact);
        }
        let lo = thetas[best.1.saturating_sub(1)];
        let hi = thetas[(best.1 + 1).min(GRID - 1)];
        let theta = golden_section(|t| self.angular_objective(&p0, th0, t).unwrap_or(f64::INFINITY), lo, hi, 1e-13);
        let mut p = p0;
        for _ in 0..20 {
            let e = contact_constraint(&Pose::new(p.x, p.y, theta), &self.probe, &self.geometry)?;
            // dc/dp = -n_w, unit length
            p -= Vector2::new(e.gradient[0], e.gradient[1]) * e.value;
            if e.value.abs() <= 1e-14 {
                break;
            }
        }
        let xd = DVector::from_column_slice(x.as_slice());
        let init = DVector::from_vec(vec![p.x, p.y, theta]);
        let y = newton_project(self, &xd, &init, tol)?;
        Ok(Pose::new(y[0], y[1], y[2]))
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

impl Constraint for PoseContact {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn codim(&self) -> usize {
        1
    }

    fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.eval(x)?.value))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(1, 3, self.eval(x)?.gradient.as_slice()))
    }

    fn hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let h = self.eval(x)?.hessian;
        Ok(vec![DMatrix::from_column_slice(3, 3, h.as_slice())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ContactGeometry {
        ContactGeometry::default()
    }

    #[test]
    fn face_contact_values() {
        let g = geom();
        let th = 0.3;
        let pose = Pose::new(0.5, -0.2, th);
        let pc = Vector2::new(0.5, -0.2) + rot(th) * Vector2::new(0.3, 0.0);
        let e = contact_constraint(&pose, &pc, &g).unwrap();
        assert!(e.value.abs() < 1e-15);
        // dc/dp is minus the world face normal
        assert!((e.gradient[0] + th.cos()).abs() < 1e-15);
        assert!((e.gradient[1] + th.sin()).abs() < 1e-15);
        let pc = Vector2::new(0.5, -0.2) + rot(th) * Vector2::new(0.35, 0.0);
        assert!((contact_constraint(&pose, &pc, &g).unwrap().value - 0.05).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = geom();
        let h = 1e-5;
        let mut checked = 0;
        for i in 0..100u64 {
            let mut r = rng::stream(5, i);
            let u: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r)).collect();
            let pose = Pose::new(u[0] - 0.5, u[1] - 0.5, (u[2] - 0.5) * 2.0);
            // contact points on the face and around a corner
            let local = if i % 2 == 0 {
                Vector2::new(0.3, (u[3] - 0.5) * 1.8)
            } else {
                let a = u[3] * std::f64::consts::FRAC_PI_2;
                Vector2::new(0.18, 0.98) + Vector2::new(a.cos(), a.sin()) * 0.12
            };
            let pc = Vector2::new(pose[0], pose[1]) + rot(pose[2]) * local;
            let e = contact_constraint(&pose, &pc, &g).unwrap();
            assert!(e.value.abs() < 1e-12);
            for k in 0..3 {
                let mut dp = Vector3::zeros();
                dp[k] = h;
                let ep = contact_constraint(&(pose + dp), &pc, &g).unwrap();
                let em = contact_constraint(&(pose - dp), &pc, &g).unwrap();
                let fd = (ep.value - em.value) / (2.0 * h);
                assert!((fd - e.gradient[k]).abs() <= 1e-5 * e.gradient.norm(), "grad {k}");
                let hd = (ep.gradient - em.gradient) / (2.0 * h);
                let scale = e.hessian.norm().max(1.0);
                assert!((hd - e.hessian.column(k)).norm() <= 1e-5 * scale, "hess {k}: {hd} vs {}", e.hessian);
            }
            checked += 1;
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn degenerate_contact_is_reported() {
        let g = geom();
        let pose = Pose::zeros();
        assert!(matches!(
            contact_constraint(&pose, &Vector2::new(0.18, 0.98), &g),
            Err(Error::DegenerateContact)
        ));
    }

    #[test]
    fn simulated_truth_is_in_contact() {
        let p = PushingProblem::default();
        let sim = simulate(&p).unwrap();
        assert_eq!(sim.truth.len(), 50);
        for (x, pc) in sim.truth.iter().zip(&sim.probes) {
            assert!(contact_constraint(x, pc, &p.geometry).unwrap().value.abs() <= 1e-10);
        }
        let bad = PushingProblem {
            probe_y_end: 1.5,
            ..p
        };
        assert!(matches!(simulate(&bad), Err(Error::InfeasiblePath { .. })));
    }

    #[test]
    fn noiseless_odometry_matches_increments() {
        let p = PushingProblem {
            q_diag: [0.0; 3],
            ..PushingProblem::default()
        };
        let sim = simulate(&p).unwrap();
        for k in 0..49 {
            let d = sim.truth[k + 1] - sim.truth[k];
            assert_eq!(sim.odometry[k], Vector3::new(d[0], d[1], wrap_angle(d[2])));
        }
    }

    #[test]
    fn odometry_noise_covariance() {
        let p = PushingProblem {
            n_steps: 10_001,
            probe_y_start: 0.0,
            probe_y_end: 0.0,
            ..PushingProblem::default()
        };
        let sim = simulate(&p).unwrap();
        let errs: Vec<DVector<f64>> = (0..10_000)
            .map(|k| {
                let d = sim.truth[k + 1] - sim.truth[k];
                let e = sim.odometry[k] - d;
                DVector::from_vec(vec![e[0], e[1], wrap_angle(e[2])])
            })
            .collect();
        let cov = crate::linalg::sample_covariance(&errs);
        for i in 0..3 {
            assert!((cov[(i, i)] / p.q_diag[i] - 1.0).abs() < 0.05, "{i}: {}", cov[(i, i)]);
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let corr = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!(corr.abs() < 0.05, "{i}{j}: {corr}");
        }
    }

    #[test]
    fn robust_projection_is_optimal() {
        let g = geom();
        let tol = Tolerances::default();
        let base = Pose::new(0.1, 0.2, 0.4);
        let pc = Vector2::new(base[0], base[1]) + rot(base[2]) * Vector2::new(0.3, 0.2);
        let pcst = PoseContact { probe: pc, geometry: g };
        for i in 0..200u64 {
            let z = rng::standard_normals(&mut rng::stream(9, i), 3);
            let x = base + Vector3::new(0.05 * z[0], 0.05 * z[1], 0.03 * z[2]);
            let y = pcst.project(&x, &tol).unwrap();
            let e = contact_constraint(&y, &pc, &g).unwrap();
            assert!(e.value.abs() < 1e-10);
            // x - y is parallel to the gradient
            let d = x - y;
            let n = e.gradient.normalize();
            assert!((d - n * n.dot(&d)).norm() < 1e-7);
        }
    }
}
