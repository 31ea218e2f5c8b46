//! Shared fixtures for the kernel benchmarks.

use nalgebra::DVector;
use tangent_gauss::gaussian::{EmpiricalMeasure, Gaussian};

/// Two nearby planar point clouds of size `n`.
pub fn planar_clouds(n: usize) -> (EmpiricalMeasure, EmpiricalMeasure) {
    let a = Gaussian::isotropic(DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap();
    let b = Gaussian::isotropic(DVector::from_vec(vec![0.1, 0.0]), 1.0).unwrap();
    (a.sample(n, 1), b.sample(n, 2))
}
