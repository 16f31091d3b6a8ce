#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempcov::dlr::{DiagLowRank, Sign};
use tempcov::rng::standard_normal;

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Dense `diag(d) ± UᵀU` assembled independently of the library.
pub fn dense(a: &DiagLowRank) -> DMatrix<f64> {
    let u = to_na(a.factors());
    let mut out = u.transpose() * &u;
    if a.sign() == Sign::Minus {
        out = -out;
    }
    for (i, d) in a.diag().iter().enumerate() {
        out[(i, i)] += d;
    }
    out
}

pub fn dense_log_det(a: &DMatrix<f64>) -> f64 {
    let chol = a.clone().cholesky().expect("oracle matrix is positive definite");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().cholesky().expect("oracle matrix is positive definite").inverse()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Random positive definite `diag(d) + UᵀU` with `d ∈ [0.1, 2]`.
pub fn random_plus(rng: &mut ChaCha8Rng, p: usize, m: usize) -> DiagLowRank {
    let d: Array1<f64> = (0..p).map(|_| rng.random_range(0.1..2.0)).collect();
    let scale = rng.random_range(0.1..1.5);
    let u = standard_normal(rng, m, p) * scale;
    DiagLowRank::new(d, u, Sign::Plus).unwrap()
}

/// Random positive definite matrix of either sign; minus-sign instances come
/// from inverting a plus-sign one.
pub fn random_pd(rng: &mut ChaCha8Rng, p: usize, m: usize) -> DiagLowRank {
    let a = random_plus(rng, p, m);
    if rng.random_bool(0.5) {
        a.invert().unwrap()
    } else {
        a
    }
}
