//! W2 estimation between empirical measures: exact assignment, 1-D quantile
//! coupling, shared-input coupling upper bounds, moment controls and grid TV.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::EmpiricalMeasure;

/// Largest measure size accepted by [`w2_assignment`].
pub const ASSIGNMENT_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W2Method {
    Assignment,
    OneDimensional,
    CoupledUpper,
    GaussianClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
    pub sizes: (usize, usize),
    /// Delta-method standard error of the value, when meaningful.
    pub std_error: Option<f64>,
}

impl W2Estimate {
    pub fn is_upper_bound(&self) -> bool {
        self.method == W2Method::CoupledUpper
    }
}

/// Exact empirical W2 between two uniform measures of equal size, by
/// minimum-cost perfect matching on squared Euclidean costs.
pub fn w2_assignment(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<W2Estimate> {
    let n = p.len();
    if n != q.len() || !p.is_uniform() || !q.is_uniform() {
        return Err(Error::NonUniformMeasure);
    }
    if n > ASSIGNMENT_CAP {
        return Err(Error::AssignmentTooLarge { n, cap: ASSIGNMENT_CAP });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty measures".into()));
    }
    check_dim(p.dim(), q.dim())?;
    let (pp, qp) = (p.points(), q.points());
    let cost: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| qp.iter().map(move |y| (&pp[i] - y).norm_squared()))
        .collect();
    let scale = cost.iter().fold(0.0_f64, |a, &b| a.max(b));
    if scale == 0.0 {
        return Ok(W2Estimate {
            value: 0.0,
            method: W2Method::Assignment,
            sizes: (n, n),
            std_error: None,
        });
    }
    let scaled: Vec<f64> = cost.iter().map(|c| c / scale).collect();
    let assign = lapjv(n, &scaled);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(W2Estimate {
        value: (total / n as f64).sqrt(),
        method: W2Method::Assignment,
        sizes: (n, n),
        std_error: None,
    })
}

/// Exact W2 between weighted 1-D measures via the quantile coupling.
pub fn w2_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<W2Estimate> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: if p.dim() != 1 { p.dim() } else { q.dim() },
        });
    }
    let a: Vec<(f64, f64)> = p.points().iter().map(|x| x[0]).zip(p.weights().iter().copied()).collect();
    let b: Vec<(f64, f64)> = q.points().iter().map(|x| x[0]).zip(q.weights().iter().copied()).collect();
    Ok(W2Estimate {
        value: quantile_coupling_cost(a, b).sqrt(),
        method: W2Method::OneDimensional,
        sizes: (p.len(), q.len()),
        std_error: None,
    })
}

/// Quantile-coupling cost for unweighted samples.
pub fn w2_1d_values(a: &[f64], b: &[f64]) -> f64 {
    let wa = 1.0 / a.len() as f64;
    let wb = 1.0 / b.len() as f64;
    quantile_coupling_cost(a.iter().map(|&x| (x, wa)).collect(), b.iter().map(|&x| (x, wb)).collect()).sqrt()
}

fn quantile_coupling_cost(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        cost += m * (a[i].0 - b[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    cost
}

/// `sqrt(mean ||x_i - y_i||^2)` over index-paired samples: the cost of one
/// particular coupling, hence an upper bound on W2.
pub fn w2_coupled_upper(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<W2Estimate> {
    check_dim(xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty coupling".into()));
    }
    let sq: Vec<f64> = xs.par_iter().zip(ys.par_iter()).map(|(x, y)| (x - y).norm_squared()).collect();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = if sq.len() > 1 {
        sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let value = mean.sqrt();
    let std_error = if value > 0.0 { Some((var / n).sqrt() / (2.0 * value)) } else { Some(0.0) };
    Ok(W2Estimate {
        value,
        method: W2Method::CoupledUpper,
        sizes: (xs.len(), ys.len()),
        std_error,
    })
}

/// Mean and second-moment gaps with the inequalities they must satisfy
/// against a given W2 value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentControls {
    pub mean_gap: f64,
    pub second_moment_gap: f64,
    /// `sqrt(2 (m2(P) + m2(Q))) * W2`.
    pub second_moment_bound: f64,
    pub mean_inequality_holds: bool,
    pub second_moment_inequality_holds: bool,
}

pub fn moment_controls(p: &EmpiricalMeasure, q: &EmpiricalMeasure, w2: f64) -> Result<MomentControls> {
    check_dim(p.dim(), q.dim())?;
    let mean_gap = (p.mean() - q.mean()).norm();
    let second_moment_gap = (p.second_moment() - q.second_moment()).norm();
    let m2p = p.second_moment().trace();
    let m2q = q.second_moment().trace();
    let second_moment_bound = (2.0 * (m2p + m2q)).sqrt() * w2;
    let slack = 1e-10 * (1.0 + m2p + m2q);
    Ok(MomentControls {
        mean_gap,
        second_moment_gap,
        second_moment_bound,
        mean_inequality_holds: mean_gap <= w2 + slack,
        second_moment_inequality_holds: second_moment_gap <= second_moment_bound + slack,
    })
}

/// Total variation between two densities sampled on a common grid.
pub fn tv_on_grid(a: &[f64], b: &[f64], cell_volume: f64) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    for d in [a, b] {
        let mass: f64 = d.iter().sum::<f64>() * cell_volume;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized { mass });
        }
    }
    let tv = 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * cell_volume;
    Ok(tv.clamp(0.0, 1.0))
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Angles of planar points about `center`, unwrapped relative to
/// `reference` into `(-pi, pi]`.
pub fn unwrap_angles(points: &[DVector<f64>], center: &DVector<f64>, reference: f64) -> Vec<f64> {
    points
        .iter()
        .map(|p| wrap_angle((p[1] - center[1]).atan2(p[0] - center[0]) - reference))
        .collect()
}

/// Fraction of unwrapped angles within `margin` of the antipode.
pub fn antipodal_fraction(angles: &[f64], margin: f64) -> f64 {
    angles.iter().filter(|a| a.abs() > PI - margin).count() as f64 / angles.len().max(1) as f64
}

/// 1-D W2 between two angular samples, unwrapped about `reference`; fails if
/// more than `max_antipodal` of either sample lies within 0.05 pi of the
/// antipode.
pub fn w2_angular(a: &[f64], b: &[f64], reference: f64, max_antipodal: f64) -> Result<W2Estimate> {
    let ua: Vec<f64> = a.iter().map(|t| wrap_angle(t - reference)).collect();
    let ub: Vec<f64> = b.iter().map(|t| wrap_angle(t - reference)).collect();
    for u in [&ua, &ub] {
        if antipodal_fraction(u, 0.05 * PI) > max_antipodal {
            return Err(Error::AntipodalMass);
        }
    }
    Ok(W2Estimate {
        value: w2_1d_values(&ua, &ub),
        method: W2Method::OneDimensional,
        sizes: (a.len(), b.len()),
        std_error: None,
    })
}

/// Row-to-column assignment minimizing the total cost of a dense `n x n`
/// matrix (row-major), by the Jonker-Volgenant shortest augmenting path
/// method: column reduction with reduction transfer, two rounds of
/// augmenting row reduction, then Dijkstra-style augmentation.
pub fn lapjv(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let mut solver = Lap {
        n,
        cost,
        x: vec![NONE; n],
        y: vec![NONE; n],
        v: vec![0.0; n],
    };
    let mut free_rows = vec![0usize; n];
    let mut n_free = solver.column_reduction(&mut free_rows);
    let mut rounds = 0;
    while n_free > 0 && rounds < 2 {
        n_free = solver.augmenting_row_reduction(n_free, &mut free_rows);
        rounds += 1;
    }
    if n_free > 0 {
        solver.augment(&free_rows[..n_free]);
    }
    solver.x
}

const NONE: usize = usize::MAX;

struct Lap<'a> {
    n: usize,
    cost: &'a [f64],
    /// row -> column
    x: Vec<usize>,
    /// column -> row
    y: Vec<usize>,
    /// column duals
    v: Vec<f64>,
}

impl Lap<'_> {
    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    fn column_reduction(&mut self, free_rows: &mut [usize]) -> usize {
        let n = self.n;
        self.v.iter_mut().for_each(|v| *v = f64::INFINITY);
        self.y.iter_mut().for_each(|y| *y = 0);
        for i in 0..n {
            for j in 0..n {
                let c = self.c(i, j);
                if c < self.v[j] {
                    self.v[j] = c;
                    self.y[j] = i;
                }
            }
        }
        let mut unique = vec![true; n];
        for j in (0..n).rev() {
            let i = self.y[j];
            if self.x[i] == NONE {
                self.x[i] = j;
            } else {
                unique[i] = false;
                self.y[j] = NONE;
            }
        }
        let mut n_free = 0;
        for i in 0..n {
            if self.x[i] == NONE {
                free_rows[n_free] = i;
                n_free += 1;
            } else if unique[i] {
                let j = self.x[i];
                let mut min = f64::INFINITY;
                for j2 in 0..n {
                    if j2 != j {
                        min = min.min(self.c(i, j2) - self.v[j2]);
                    }
                }
                self.v[j] -= min;
            }
        }
        n_free
    }

    fn augmenting_row_reduction(&mut self, n_free: usize, free_rows: &mut [usize]) -> usize {
        let n = self.n;
        let mut current = 0;
        let mut new_free = 0;
        let mut rr_cnt = 0;
        while current < n_free {
            rr_cnt += 1;
            let free_i = free_rows[current];
            current += 1;
            let mut j1 = 0;
            let mut v1 = self.c(free_i, 0) - self.v[0];
            let mut j2 = NONE;
            let mut v2 = f64::INFINITY;
            for j in 1..n {
                let c = self.c(free_i, j) - self.v[j];
                if c < v2 {
                    if c >= v1 {
                        v2 = c;
                        j2 = j;
                    } else {
                        v2 = v1;
                        v1 = c;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = self.y[j1];
            let v1_new = self.v[j1] - (v2 - v1);
            let v1_lowers = v1_new < self.v[j1];
            if rr_cnt < current * n {
                if v1_lowers {
                    self.v[j1] = v1_new;
                } else if i0 != NONE && j2 != NONE {
                    j1 = j2;
                    i0 = self.y[j2];
                }
                if i0 != NONE {
                    if v1_lowers {
                        current -= 1;
                        free_rows[current] = i0;
                    } else {
                        free_rows[new_free] = i0;
                        new_free += 1;
                    }
                }
            } else if i0 != NONE {
                free_rows[new_free] = i0;
                new_free += 1;
            }
            self.x[free_i] = j1;
            self.y[j1] = free_i;
        }
        new_free
    }

    fn augment(&mut self, free_rows: &[usize]) {
        let n = self.n;
        let mut pred = vec![0usize; n];
        let mut d = vec![0.0; n];
        let mut cols = vec![0usize; n];
        for &free_i in free_rows {
            let mut j = self.find_path(free_i, &mut pred, &mut d, &mut cols);
            let mut i = NONE;
            let mut k = 0;
            while i != free_i {
                i = pred[j];
                self.y[j] = i;
                std::mem::swap(&mut j, &mut self.x[i]);
                k += 1;
                assert!(k <= n, "augmenting path longer than n");
            }
        }
    }

    fn find_path(&mut self, start_i: usize, pred: &mut [usize], d: &mut [f64], cols: &mut [usize]) -> usize {
        let n = self.n;
        let (mut lo, mut hi) = (0, 0);
        let mut final_j = NONE;
        let mut n_ready = 0;
        for (k, c) in cols.iter_mut().enumerate() {
            *c = k;
        }
        for j in 0..n {
            d[j] = self.c(start_i, j) - self.v[j];
            pred[j] = start_i;
        }
        while final_j == NONE {
            if lo == hi {
                n_ready = lo;
                hi = find_min_columns(n, lo, d, cols);
                for &j in &cols[lo..hi] {
                    if self.y[j] == NONE {
                        final_j = j;
                    }
                }
            }
            if final_j == NONE {
                final_j = self.scan(&mut lo, &mut hi, d, cols, pred);
            }
        }
        let mind = d[cols[lo]];
        for &j in &cols[..n_ready] {
            self.v[j] += d[j] - mind;
        }
        final_j
    }

    fn scan(&self, plo: &mut usize, phi: &mut usize, d: &mut [f64], cols: &mut [usize], pred: &mut [usize]) -> usize {
        let n = self.n;
        let (mut lo, mut hi) = (*plo, *phi);
        while lo != hi {
            let j = cols[lo];
            lo += 1;
            let i = self.y[j];
            let mind = d[j];
            let h = self.c(i, j) - self.v[j] - mind;
            for k in hi..n {
                let j = cols[k];
                let cred = self.c(i, j) - self.v[j] - h;
                if cred < d[j] {
                    d[j] = cred;
                    pred[j] = i;
                    if cred == mind {
                        if self.y[j] == NONE {
                            return j;
                        }
                        cols[k] = cols[hi];
                        cols[hi] = j;
                        hi += 1;
                    }
                }
            }
        }
        *plo = lo;
        *phi = hi;
        NONE
    }
}

/// Move the columns of minimal `d` among `cols[lo..]` to the front; returns
/// the end of that block.
fn find_min_columns(n: usize, lo: usize, d: &[f64], cols: &mut [usize]) -> usize {
    let mut hi = lo + 1;
    let mut mind = d[cols[lo]];
    for k in hi..n {
        let j = cols[k];
        if d[j] <= mind {
            if d[j] < mind {
                hi = lo;
                mind = d[j];
            }
            cols[k] = cols[hi];
            cols[hi] = j;
            hi += 1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use proptest::prelude::*;

    fn cloud(vals: &[&[f64]]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(vals.iter().map(|v| DVector::from_row_slice(v)).collect()).unwrap()
    }

    fn brute_force(n: usize, cost: &[f64]) -> f64 {
        fn rec(n: usize, row: usize, used: &mut Vec<bool>, cost: &[f64], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(n, row + 1, used, cost, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(n, 0, &mut vec![false; n], cost, 0.0, &mut best);
        best
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let p = cloud(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]]);
        assert_eq!(w2_assignment(&p, &p).unwrap().value, 0.0);
    }

    #[test]
    fn point_masses() {
        let p = cloud(&[&[0.0, 0.0]]);
        let q = cloud(&[&[3.0, 4.0]]);
        assert!((w2_assignment(&p, &q).unwrap().value - 5.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_samples_match_closed_form() {
        let a = Gaussian::isotropic(DVector::from_element(1, 0.0), 1.0).unwrap();
        let b = Gaussian::isotropic(DVector::from_element(1, 2.0), 1.0).unwrap();
        let w = w2_assignment(&a.sample(2048, 1), &b.sample(2048, 2)).unwrap();
        assert!((w.value - 2.0).abs() < 0.1, "{w:?}");
    }

    #[test]
    fn assignment_rejects_oversize_and_weighted() {
        let pts: Vec<DVector<f64>> = (0..4097).map(|i| DVector::from_element(1, i as f64)).collect();
        let big = EmpiricalMeasure::uniform(pts).unwrap();
        assert!(matches!(w2_assignment(&big, &big), Err(Error::AssignmentTooLarge { .. })));
        let w = EmpiricalMeasure::weighted(
            vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)],
            vec![0.3, 0.7],
        )
        .unwrap();
        assert!(matches!(w2_assignment(&w, &w), Err(Error::NonUniformMeasure)));
    }

    #[test]
    fn one_dimensional_cases() {
        let p = cloud(&[&[0.0], &[1.0], &[5.0]]);
        let q = cloud(&[&[2.0], &[3.0], &[7.0]]);
        assert!(w2_1d(&p, &p).unwrap().value < 1e-15);
        assert!((w2_1d(&p, &q).unwrap().value - 2.0).abs() < 1e-12);
        let weighted = EmpiricalMeasure::weighted(
            vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let single = cloud(&[&[0.5]]);
        assert!((w2_1d(&weighted, &single).unwrap().value - 0.5).abs() < 1e-12);
        assert!(w2_1d(&cloud(&[&[0.0, 1.0]]), &single).is_err());
    }

    #[test]
    fn coupled_upper_bound() {
        let xs = vec![DVector::from_element(2, 1.0); 4];
        assert_eq!(w2_coupled_upper(&xs, &xs).unwrap().value, 0.0);
        let ys: Vec<DVector<f64>> = xs.iter().map(|x| x.add_scalar(0.5)).collect();
        let w = w2_coupled_upper(&xs, &ys).unwrap();
        assert!(w.is_upper_bound());
        assert!((w.value - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn moment_controls_for_translation() {
        let p = cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]]);
        let q = cloud(&[&[1.0, 1.0], &[2.0, 1.0], &[1.0, 3.0]]);
        let w = w2_assignment(&p, &q).unwrap().value;
        let mc = moment_controls(&p, &q, w).unwrap();
        assert!((mc.mean_gap - w).abs() < 1e-12);
        assert!(mc.mean_inequality_holds && mc.second_moment_inequality_holds);
        let same = moment_controls(&p, &p, 0.0).unwrap();
        assert_eq!((same.mean_gap, same.second_moment_gap), (0.0, 0.0));
    }

    #[test]
    fn tv_cases() {
        let a = [0.5, 0.5, 0.0, 0.0];
        let b = [0.0, 0.0, 0.5, 0.5];
        assert_eq!(tv_on_grid(&a, &a, 1.0).unwrap(), 0.0);
        assert!((tv_on_grid(&a, &b, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(tv_on_grid(&a, &[0.1; 4], 1.0), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn angular_unwrapping() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        let near = [3.1, -3.1, 3.13];
        assert!(matches!(w2_angular(&near, &near, 0.0, 0.01), Err(Error::AntipodalMass)));
        let w = w2_angular(&[0.1, 0.2], &[0.3, 0.4], 0.0, 0.01).unwrap();
        assert!((w.value - 0.2).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lapjv_matches_brute_force(n in 1usize..=7, raw in proptest::collection::vec(0.0f64..10.0, 49), ties in any::<bool>()) {
            let cost: Vec<f64> = raw[..n * n].iter().map(|c| if ties { c.round() } else { *c }).collect();
            let assign = lapjv(n, &cost);
            let mut seen = vec![false; n];
            for &j in &assign { prop_assert!(!seen[j]); seen[j] = true; }
            let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            prop_assert!((total - brute_force(n, &cost)).abs() < 1e-9);
        }

        #[test]
        fn assignment_matches_sorted_matching(vals in proptest::collection::vec(-5.0f64..5.0, 2..60), shift in -2.0f64..2.0) {
            let p: Vec<DVector<f64>> = vals.iter().map(|v| DVector::from_element(1, *v)).collect();
            let q: Vec<DVector<f64>> = vals.iter().rev().map(|v| DVector::from_element(1, v * 0.7 + shift)).collect();
            let p = EmpiricalMeasure::uniform(p).unwrap();
            let q = EmpiricalMeasure::uniform(q).unwrap();
            let a = w2_assignment(&p, &q).unwrap().value;
            let b = w2_1d(&p, &q).unwrap().value;
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn assignment_metric_axioms(raw in proptest::collection::vec(-3.0f64..3.0, 3 * 2 * 12)) {
            let mk = |k: usize| EmpiricalMeasure::uniform(
                (0..12).map(|i| DVector::from_row_slice(&raw[(k * 12 + i) * 2..(k * 12 + i) * 2 + 2])).collect()
            ).unwrap();
            let (a, b, c) = (mk(0), mk(1), mk(2));
            let ab = w2_assignment(&a, &b).unwrap().value;
            let ba = w2_assignment(&b, &a).unwrap().value;
            let bc = w2_assignment(&b, &c).unwrap().value;
            let ac = w2_assignment(&a, &c).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-8);
            let mc = moment_controls(&a, &b, ab).unwrap();
            prop_assert!(mc.mean_inequality_holds && mc.second_moment_inequality_holds);
        }

        #[test]
        fn lipschitz_pushforward_does_not_increase(raw in proptest::collection::vec(-3.0f64..3.0, 2 * 2 * 10), angle in 0.0f64..6.3, shrink in 0.1f64..1.0) {
            let mk = |k: usize| -> Vec<DVector<f64>> {
                (0..10).map(|i| DVector::from_row_slice(&raw[(k * 10 + i) * 2..(k * 10 + i) * 2 + 2])).collect()
            };
            let rot = nalgebra::Rotation2::new(angle);
            let map = |v: &DVector<f64>| {
                let p = rot * nalgebra::Vector2::new(v[0], v[1]) * shrink;
                DVector::from_vec(vec![p.x, p.y])
            };
            let (a, b) = (mk(0), mk(1));
            let before = w2_assignment(&EmpiricalMeasure::uniform(a.clone()).unwrap(), &EmpiricalMeasure::uniform(b.clone()).unwrap()).unwrap().value;
            let fa = EmpiricalMeasure::uniform(a.iter().map(map).collect()).unwrap();
            let fb = EmpiricalMeasure::uniform(b.iter().map(map).collect()).unwrap();
            let after = w2_assignment(&fa, &fb).unwrap().value;
            prop_assert!(after <= before + 1e-8);
        }
    }
}
