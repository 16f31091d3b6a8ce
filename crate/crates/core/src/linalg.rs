//! Small dense kernels for the m×m inner systems.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
///
/// Fails if a pivot is not strictly positive or not finite, which is also the
/// positive-definiteness check used throughout the crate.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of {}x{} matrix",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} of {n}x{n} inner matrix is {diag:e}"
            )));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` in place for lower-triangular `L`; `B` is overwritten by `X`.
pub fn forward_substitute(l: ArrayView2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                let (head, mut tail) = b.view_mut().split_at(ndarray::Axis(0), i);
                let src = head.row(k);
                tail.row_mut(0).scaled_add(-lik, &src);
            }
        }
        let lii = l[[i, i]];
        b.row_mut(i).mapv_inplace(|v| v / lii);
    }
}

/// Sum of squares of all entries.
pub fn frobenius_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            cholesky(a.view()),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn forward_substitution_solves() {
        let l = array![[2.0, 0.0], [1.0, 3.0]];
        let mut b = array![[2.0, 4.0], [7.0, 5.0]];
        forward_substitute(l.view(), &mut b);
        let back = l.dot(&b);
        assert_eq!(back, array![[2.0, 4.0], [7.0, 5.0]]);
    }

    #[test]
    fn empty_matrix_is_fine() {
        let a = Array2::<f64>::zeros((0, 0));
        assert_eq!(cholesky(a.view()).unwrap().dim(), (0, 0));
    }
}
