//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Largest eigenvalue of a symmetric matrix (operator norm when PSD).
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sorted_eigen(m).0[0]
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let (v, _) = sorted_eigen(m);
    v[v.len() - 1]
}

/// Spectral operator norm of a general matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Symmetric PSD square root, with eigenvalues clamped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sorted_eigen(m);
    let top = vals.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let tol = 1e-9 * top.max(f64::MIN_POSITIVE);
    if let Some(&bad) = vals.iter().find(|&&v| v < -tol) {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: bad });
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    Ok(symmetrize(&(&vecs * d * vecs.transpose())))
}

/// Orthonormal bases `(normal, tangent)` for `range(J^T)` and `null(J)`,
/// where `J` is `m x n` with full row rank `m`. Returns the smallest singular
/// value so callers can reject rank deficiency.
pub fn split_row_space(j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let n = j.ncols();
    let m = j.nrows();
    let gram = j.transpose() * j;
    let (vals, vecs) = sorted_eigen(&gram);
    let sigma_min = if m == 0 { f64::INFINITY } else { vals[m - 1].max(0.0).sqrt() };
    let mut normal = vecs.columns(0, m).into_owned();
    let mut tangent = vecs.columns(m, n - m).into_owned();
    canonical_signs(&mut normal);
    canonical_signs(&mut tangent);
    (normal, tangent, sigma_min)
}

/// Flip column signs so that the entry of largest magnitude is positive.
pub fn canonical_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let (mut best, mut idx) = (0.0_f64, 0);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best + 1e-12 {
                best = v.abs();
                idx = i;
            }
        }
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or_else(|| Error::SingularCovariance {
        min_eigenvalue: lambda_min(m),
    })?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    v[lo] * (1.0 - t) + v[hi] * t
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Ranks with ties sharing their average rank (1-based).
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Sample covariance (denominator `n - 1`) of row points.
pub fn sample_covariance(points: &[DVector<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let dim = points[0].len();
    let mean = points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov / (n as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = psd_sqrt(&m).unwrap();
        assert!((&s * &s - &m).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn split_row_space_is_orthonormal() {
        let j = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let (s, n, smin) = split_row_space(&j);
        assert!(close(smin, 6f64.sqrt(), 1e-12));
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((s.transpose() * &n).norm() < 1e-12);
        assert!((&j * &n).norm() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x.powi(3) + 1.0).collect();
        assert!(close(spearman(&a, &b), 1.0, 1e-12));
    }

    #[test]
    fn slope_of_line() {
        assert!(close(ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), 2.0, 1e-12));
    }

    #[test]
    fn quantile_interpolates() {
        assert!(close(quantile(&[0.0, 10.0], 0.25), 2.5, 1e-12));
        assert!(close(median(&[5.0, 1.0, 3.0]), 3.0, 1e-12));
    }
}
