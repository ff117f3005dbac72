#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn gaussian_vector(r: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample(StandardNormal))
}

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(r, d, d).qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..d {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// SPD matrix with eigenvalues spanning exactly `[1, cond]` (log-uniform interior).
pub fn random_spd(r: &mut ChaCha8Rng, d: usize, cond: f64) -> DMatrix<f64> {
    let q = random_orthogonal(r, d);
    let mut eig: Vec<f64> = (0..d)
        .map(|i| match i {
            0 => 1.0,
            1 => cond,
            _ => cond.powf(r.gen::<f64>()),
        })
        .collect();
    if d == 1 {
        eig = vec![1.0];
    }
    let m = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
