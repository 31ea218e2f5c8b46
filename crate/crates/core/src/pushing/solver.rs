use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::{contact_constraint, simulate, ContactEval, Pose, PoseContact, PushingProblem, Simulation};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, split_row_space, symmetrize};
use crate::tolerances::Tolerances;
use crate::wasserstein::wrap_angle;

/// Largest dimension solved with dense inverses.
const DENSE_LIMIT: usize = 600;
const MAX_OUTER: usize = 100;
const STEP_TOL: f64 = 1e-10;
const CONSTRAINT_TOL: f64 = 1e-8;

/// Optimized trajectory with its Gauss-Newton information and covariances.
/// Pose 0 is fixed; matrices index poses `1..n` in blocks of three.
#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub problem: PushingProblem,
    pub poses: Vec<Pose>,
    pub probes: Vec<Vector2<f64>>,
    pub information: DMatrix<f64>,
    /// Stacked constraint gradients, one column per constrained pose.
    pub constraint_jacobian: DMatrix<f64>,
    /// Orthonormal basis of the null space of `S^T`.
    pub null_space: DMatrix<f64>,
    /// Dense covariances, kept when `3(n-1) <= 600`.
    pub sigma_unc: Option<DMatrix<f64>>,
    pub sigma_con: Option<DMatrix<f64>>,
    pub sigma_unc_blocks: Vec<Matrix3<f64>>,
    pub sigma_con_blocks: Vec<Matrix3<f64>>,
    pub residuals: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

impl TrajectorySolution {
    pub fn n_free(&self) -> usize {
        self.poses.len() - 1
    }

    fn block_index(&self, k: usize) -> Result<usize> {
        if k == 0 || k >= self.poses.len() {
            return Err(Error::InvalidArgument(format!("step {k} is not a free pose")));
        }
        Ok(k - 1)
    }

    /// Unconstrained marginal covariance of pose `k >= 1`.
    pub fn unc_block(&self, k: usize) -> Result<Matrix3<f64>> {
        Ok(self.sigma_unc_blocks[self.block_index(k)?])
    }

    pub fn con_block(&self, k: usize) -> Result<Matrix3<f64>> {
        Ok(self.sigma_con_blocks[self.block_index(k)?])
    }

    pub fn contact(&self, k: usize) -> PoseContact {
        PoseContact {
            probe: self.probes[k],
            geometry: self.problem.geometry,
        }
    }

    pub fn contact_eval(&self, k: usize) -> Result<ContactEval> {
        contact_constraint(&self.poses[k], &self.probes[k], &self.problem.geometry)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

fn get3(x: &DVector<f64>, i: usize) -> Pose {
    Pose::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

fn set3(x: &mut DVector<f64>, i: usize, p: &Pose) {
    x.rows_mut(3 * i, 3).copy_from(p);
}

/// Odometry residuals `x_{k+1} - (x_k + u_k)` with wrapped angles.
fn odometry_residuals(x0: &Pose, vars: &DVector<f64>, odo: &[Vector3<f64>]) -> DVector<f64> {
    let m = odo.len();
    let mut r = DVector::zeros(3 * m);
    for k in 0..m {
        let prev = if k == 0 { *x0 } else { get3(vars, k - 1) };
        let next = get3(vars, k);
        let mut d = next - prev - odo[k];
        d[2] = wrap_angle(d[2]);
        r.rows_mut(3 * k, 3).copy_from(&d);
    }
    r
}

/// `H^T W H` for the odometry chain, with `W = Q^{-1}`.
fn chain_information(m: usize, q_inv: &Matrix3<f64>) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(3 * m, 3 * m);
    for i in 0..m {
        let mut d = *q_inv;
        if i + 1 < m {
            d += q_inv;
            f.view_mut((3 * i, 3 * (i + 1)), (3, 3)).copy_from(&(-q_inv));
            f.view_mut((3 * (i + 1), 3 * i), (3, 3)).copy_from(&(-q_inv));
        }
        f.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&d);
    }
    f
}

/// `H^T W r` for the odometry chain.
fn chain_gradient(r: &DVector<f64>, q_inv: &Matrix3<f64>) -> DVector<f64> {
    let m = r.len() / 3;
    let mut g = DVector::zeros(3 * m);
    for k in 0..m {
        let wr = q_inv * Vector3::new(r[3 * k], r[3 * k + 1], r[3 * k + 2]);
        // r_k depends on var k (+I) and var k-1 (-I)
        let mut gk = Vector3::from(g.fixed_rows::<3>(3 * k));
        gk += wr;
        g.fixed_rows_mut::<3>(3 * k).copy_from(&gk);
        if k > 0 {
            let mut gp = Vector3::from(g.fixed_rows::<3>(3 * (k - 1)));
            gp -= wr;
            g.fixed_rows_mut::<3>(3 * (k - 1)).copy_from(&gp);
        }
    }
    g
}

fn cost(r: &DVector<f64>, q_inv: &Matrix3<f64>) -> f64 {
    (0..r.len() / 3)
        .map(|k| {
            let v = Vector3::new(r[3 * k], r[3 * k + 1], r[3 * k + 2]);
            0.5 * v.dot(&(q_inv * v))
        })
        .sum()
}

fn contacts_at(vars: &DVector<f64>, sim: &Simulation, problem: &PushingProblem) -> Result<Vec<ContactEval>> {
    (0..vars.len() / 3)
        .map(|i| contact_constraint(&get3(vars, i), &sim.probes[i + 1], &problem.geometry))
        .collect()
}

/// Diagonal blocks of `A^{-1}` for a symmetric positive definite
/// block-tridiagonal `A` given by its diagonal blocks and the blocks just
/// above the diagonal.
pub fn block_tridiagonal_selected_inverse(diag: &[DMatrix<f64>], upper: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let m = diag.len();
    if m == 0 || upper.len() + 1 != m {
        return Err(Error::InvalidArgument("need m diagonal and m-1 upper blocks".into()));
    }
    // forward Schur complements D_i = A_i - B_{i-1}^T D_{i-1}^{-1} B_{i-1}
    let mut d_inv: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut d = diag[i].clone();
        if i > 0 {
            d -= upper[i - 1].transpose() * &d_inv[i - 1] * &upper[i - 1];
        }
        d_inv.push(spd_inverse(&symmetrize(&d))?);
    }
    // backward: G_i = D_i^{-1} + D_i^{-1} B_i G_{i+1} B_i^T D_i^{-1}
    let mut g = vec![DMatrix::zeros(0, 0); m];
    g[m - 1] = d_inv[m - 1].clone();
    for i in (0..m - 1).rev() {
        let t = &d_inv[i] * &upper[i];
        g[i] = symmetrize(&(&d_inv[i] + &t * &g[i + 1] * t.transpose()));
    }
    Ok(g)
}

fn to3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_iterator(m.iter().copied())
}

/// Solves `min sum_k ||x_{k+1} - x_k - u_k||^2_{Q^{-1}}` subject to
/// `c_k(x_k) = 0` by Newton iteration on the KKT system, then forms
/// `F = H^T W H`, `Sigma_unc = F^{-1}` and `Sigma_con = N (N^T F N)^{-1} N^T`.
pub fn solve_constrained_gn(problem: &PushingProblem, sim: &Simulation) -> Result<TrajectorySolution> {
    problem.validate()?;
    if !problem.q_diag.iter().all(|q| *q > 0.0) {
        return Err(Error::InvalidArgument("odometry noise must be positive definite to solve".into()));
    }
    let n = problem.n_steps;
    if sim.truth.len() != n || sim.probes.len() != n || sim.odometry.len() + 1 != n {
        return Err(Error::InvalidArgument("simulation does not match the problem size".into()));
    }
    let m = n - 1;
    let tol = Tolerances::default();
    let q_inv = problem.noise_covariance().try_inverse().expect("positive diagonal");
    let x0 = sim.truth[0];
    let mc = if problem.contacts { m } else { 0 };

    // dead reckoning from the previous projected pose, projected onto the
    // contact set; chaining keeps every guess on the face in contact
    let mut vars = DVector::zeros(3 * m);
    let mut prev = x0;
    for k in 0..m {
        let mut p = prev + sim.odometry[k];
        p[2] = wrap_angle(p[2]);
        if problem.contacts {
            let contact = PoseContact {
                probe: sim.probes[k + 1],
                geometry: problem.geometry,
            };
            p = contact.project(&p, &tol)?;
            p[2] = wrap_angle(p[2]);
        }
        prev = p;
        set3(&mut vars, k, &p);
    }

    let f_info = chain_information(m, &q_inv);
    let mut lambda = DVector::zeros(mc);
    let mut iterations = 0;
    let mut converged = false;
    let mut last_step = f64::INFINITY;
    for it in 0..MAX_OUTER {
        iterations = it + 1;
        let r = odometry_residuals(&x0, &vars, &sim.odometry);
        let g = chain_gradient(&r, &q_inv);
        let contacts = if problem.contacts {
            contacts_at(&vars, sim, problem)?
        } else {
            Vec::new()
        };
        let dim = 3 * m + mc;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (3 * m, 3 * m)).copy_from(&f_info);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, 3 * m).copy_from(&(-&g));
        for (i, e) in contacts.iter().enumerate() {
            let mut blk = kkt.fixed_view_mut::<3, 3>(3 * i, 3 * i);
            blk += e.hessian * lambda[i];
            kkt.fixed_view_mut::<3, 1>(3 * i, 3 * m + i).copy_from(&e.gradient);
            kkt.fixed_view_mut::<1, 3>(3 * m + i, 3 * i).copy_from(&e.gradient.transpose());
            rhs[3 * m + i] = -e.value;
        }
        let sol = kkt.lu().solve(&rhs).ok_or(Error::NoConvergence {
            what: "constrained Gauss-Newton",
            iterations: iterations,
            residual: f64::NAN,
        })?;
        let step = sol.rows(0, 3 * m).into_owned();
        let new_lambda = sol.rows(3 * m, mc).into_owned();

        // backtrack on an exact-penalty merit
        let mu = 2.0 * new_lambda.amax() + 1.0;
        let merit = |v: &DVector<f64>| -> Result<f64> {
            let rr = odometry_residuals(&x0, v, &sim.odometry);
            let pen: f64 = if problem.contacts {
                contacts_at(v, sim, problem)?.iter().map(|e| e.value.abs()).sum()
            } else {
                0.0
            };
            Ok(cost(&rr, &q_inv) + mu * pen)
        };
        let base = merit(&vars)?;
        let mut t = 1.0;
        let mut cand = &vars + &step;
        for _ in 0..30 {
            cand = &vars + &step * t;
            match merit(&cand) {
                Ok(v) if v <= base + 1e-12 * base.abs().max(1.0) => break,
                _ => t *= 0.5,
            }
        }
        for i in 0..m {
            cand[3 * i + 2] = wrap_angle(cand[3 * i + 2]);
        }
        vars = cand;
        lambda = &lambda * (1.0 - t) + new_lambda * t;
        last_step = step.norm() * t;
        let max_c = if problem.contacts {
            contacts_at(&vars, sim, problem)?.iter().fold(0.0_f64, |a, e| a.max(e.value.abs()))
        } else {
            0.0
        };
        if last_step < STEP_TOL && max_c <= CONSTRAINT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "constrained Gauss-Newton",
            iterations,
            residual: last_step,
        });
    }

    let contacts = if problem.contacts {
        contacts_at(&vars, sim, problem)?
    } else {
        Vec::new()
    };
    let mut s = DMatrix::zeros(3 * m, mc);
    let mut null_space = DMatrix::zeros(3 * m, 3 * m - mc);
    let bases: Vec<DMatrix<f64>> = if problem.contacts {
        contacts
            .iter()
            .map(|e| {
                let (_, t, smin) = split_row_space(&DMatrix::from_row_slice(1, 3, e.gradient.as_slice()));
                if smin <= tol.rank_sigma_min {
                    Err(Error::RankDeficient { sigma_min: smin })
                } else {
                    Ok(t)
                }
            })
            .collect::<Result<_>>()?
    } else {
        vec![DMatrix::identity(3, 3); m]
    };
    let kdim = bases[0].ncols();
    for i in 0..m {
        if problem.contacts {
            s.fixed_view_mut::<3, 1>(3 * i, i).copy_from(&contacts[i].gradient);
        }
        null_space.view_mut((3 * i, kdim * i), (3, kdim)).copy_from(&bases[i]);
    }

    let (sigma_unc, sigma_con, unc_blocks, con_blocks) = if 3 * m <= DENSE_LIMIT {
        let su = spd_inverse(&f_info)?;
        let reduced = symmetrize(&(null_space.transpose() * &f_info * &null_space));
        let sc = symmetrize(&(&null_space * spd_inverse(&reduced)? * null_space.transpose()));
        let ub = (0..m).map(|i| to3(&su.view((3 * i, 3 * i), (3, 3)).into_owned())).collect();
        let cb = (0..m).map(|i| to3(&sc.view((3 * i, 3 * i), (3, 3)).into_owned())).collect();
        (Some(su), Some(sc), ub, cb)
    } else {
        let blk = |i: usize, j: usize| f_info.view((3 * i, 3 * j), (3, 3)).into_owned();
        let fd: Vec<DMatrix<f64>> = (0..m).map(|i| blk(i, i)).collect();
        let fu: Vec<DMatrix<f64>> = (0..m - 1).map(|i| blk(i, i + 1)).collect();
        let ub = block_tridiagonal_selected_inverse(&fd, &fu)?.iter().map(to3).collect();
        let rd: Vec<DMatrix<f64>> = (0..m).map(|i| bases[i].transpose() * &fd[i] * &bases[i]).collect();
        let ru: Vec<DMatrix<f64>> = (0..m - 1)
            .map(|i| bases[i].transpose() * &fu[i] * &bases[i + 1])
            .collect();
        let cb = block_tridiagonal_selected_inverse(&rd, &ru)?
            .iter()
            .zip(&bases)
            .map(|(g, b)| to3(&symmetrize(&(b * g * b.transpose()))))
            .collect();
        (None, None, ub, cb)
    };

    let mut poses = vec![x0];
    poses.extend((0..m).map(|i| get3(&vars, i)));
    Ok(TrajectorySolution {
        problem: problem.clone(),
        poses,
        probes: sim.probes.clone(),
        information: f_info,
        constraint_jacobian: s,
        null_space,
        sigma_unc,
        sigma_con,
        sigma_unc_blocks: unc_blocks,
        sigma_con_blocks: con_blocks,
        residuals: contacts.iter().map(|e| e.value).collect(),
        multipliers: lambda.iter().copied().collect(),
        iterations,
    })
}

/// Simulates and solves in one call.
pub fn simulate_and_solve(problem: &PushingProblem) -> Result<(Simulation, TrajectorySolution)> {
    let sim = simulate(problem)?;
    let sol = solve_constrained_gn(problem, &sim)?;
    Ok((sim, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_eigen;

    fn solved() -> (Simulation, TrajectorySolution) {
        simulate_and_solve(&PushingProblem::default()).unwrap()
    }

    #[test]
    fn constraints_and_tangency() {
        let (_, sol) = solved();
        assert_eq!(sol.residuals.len(), 49);
        assert!(sol.max_residual() <= 1e-8);
        let sc = sol.sigma_con.as_ref().unwrap();
        let st = sol.constraint_jacobian.transpose() * sc;
        let scale = crate::linalg::op_norm(sc);
        assert!(st.amax() <= 1e-8 * scale.max(1.0));
        assert!(crate::linalg::lambda_min(sc) > -1e-12);
    }

    #[test]
    fn trace_reduction_and_growth() {
        let (_, sol) = solved();
        let mut prev = 0.0;
        let mut ks = Vec::new();
        let mut tcs = Vec::new();
        for k in 1..50 {
            let u = sol.unc_block(k).unwrap();
            let c = sol.con_block(k).unwrap();
            let tu = u[(0, 0)] + u[(1, 1)];
            let tc = c[(0, 0)] + c[(1, 1)];
            assert!(tc <= tu + 1e-15);
            assert!(tu > prev);
            prev = tu;
            ks.push(k as f64);
            tcs.push(tc);
        }
        assert!(crate::linalg::spearman(&ks, &tcs) > 0.9);
        for k in [13, 25, 37, 49] {
            let u = sol.unc_block(k).unwrap();
            let c = sol.con_block(k).unwrap();
            let red = 100.0 * (1.0 - (c[(0, 0)] + c[(1, 1)]) / (u[(0, 0)] + u[(1, 1)]));
            assert!((40.0..=65.0).contains(&red), "k={k} red={red}");
        }
    }

    #[test]
    fn psd_sandwich() {
        let (_, sol) = solved();
        let n = &sol.null_space;
        let a = n.transpose() * sol.sigma_con.as_ref().unwrap() * n;
        let b = n.transpose() * sol.sigma_unc.as_ref().unwrap() * n;
        let (vals, _) = sorted_eigen(&(b - a));
        assert!(vals.iter().all(|v| *v > -1e-12));
    }

    #[test]
    fn noiseless_recovers_truth() {
        let p = PushingProblem {
            q_diag: [1e-12; 3],
            seed: 1,
            ..PushingProblem::default()
        };
        let mut sim = simulate(&p).unwrap();
        for k in 0..49 {
            let mut d = sim.truth[k + 1] - sim.truth[k];
            d[2] = wrap_angle(d[2]);
            sim.odometry[k] = d;
        }
        let sol = solve_constrained_gn(&p, &sim).unwrap();
        for (a, b) in sol.poses.iter().zip(&sim.truth) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn unconstrained_covariances_agree() {
        let p = PushingProblem {
            contacts: false,
            ..PushingProblem::default()
        };
        let (_, sol) = simulate_and_solve(&p).unwrap();
        assert_eq!(sol.sigma_con, sol.sigma_unc);
        assert_eq!(sol.null_space, DMatrix::identity(147, 147));
    }

    #[test]
    fn angle_shift_is_invisible() {
        let base = PushingProblem::default();
        let shifted = PushingProblem {
            initial_pose: [0.0, 0.0, 2.0 * std::f64::consts::PI],
            ..base.clone()
        };
        let (_, a) = simulate_and_solve(&base).unwrap();
        let (_, b) = simulate_and_solve(&shifted).unwrap();
        for (x, y) in a.poses.iter().zip(&b.poses) {
            assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
            assert!(wrap_angle(x[2] - y[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn selected_inverse_matches_dense() {
        let (_, sol) = solved();
        let m = sol.n_free();
        let f = &sol.information;
        let blk = |i: usize, j: usize| f.view((3 * i, 3 * j), (3, 3)).into_owned();
        let d: Vec<_> = (0..m).map(|i| blk(i, i)).collect();
        let u: Vec<_> = (0..m - 1).map(|i| blk(i, i + 1)).collect();
        let sel = block_tridiagonal_selected_inverse(&d, &u).unwrap();
        let dense = sol.sigma_unc.as_ref().unwrap();
        for i in 0..m {
            let e = &sel[i] - dense.view((3 * i, 3 * i), (3, 3));
            assert!(e.amax() <= 1e-9 * dense.amax());
        }
        assert!(block_tridiagonal_selected_inverse(&d, &u[1..]).is_err());
    }

    #[test]
    fn large_problem_uses_selected_inversion() {
        let p = PushingProblem {
            n_steps: 220,
            body_twist: [-0.005, 0.0, 0.001],
            ..PushingProblem::default()
        };
        let (_, sol) = simulate_and_solve(&p).unwrap();
        assert!(sol.sigma_unc.is_none());
        assert!(sol.max_residual() <= 1e-8);
        for k in 1..220 {
            let u = sol.unc_block(k).unwrap();
            let c = sol.con_block(k).unwrap();
            assert!(c[(0, 0)] + c[(1, 1)] <= u[(0, 0)] + u[(1, 1)]);
            let g = sol.contact_eval(k).unwrap().gradient;
            assert!((c * g).amax() <= 1e-8 * c.amax().max(1e-12));
        }
    }
}
