//! Independent reference computations for integration tests.

#![allow(dead_code)]

use dan_core::linalg::SymmetricMatrix;
use nalgebra::{DMatrix, DVector};

pub fn to_dense(a: &SymmetricMatrix) -> DMatrix<f64> {
    let p = a.dim();
    DMatrix::from_fn(p, p, |i, j| a.get(i, j))
}

/// Eigenvalues by nalgebra's symmetric QR, sorted by decreasing magnitude.
pub fn eigenvalues_by_magnitude(a: &SymmetricMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_dense(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    v
}

pub fn spectral_norm(a: &SymmetricMatrix) -> f64 {
    eigenvalues_by_magnitude(a).first().map_or(0.0, |l| l.abs())
}

/// Dense LU solve of `a x = b`.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    a.clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    dist(a, b) / scale
}
