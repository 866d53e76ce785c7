//! Small dense linear-algebra kernels shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// `log det W` from the Cholesky factor. Fails iff `W` is not positive definite.
pub fn log_det_pd(w: &DMatrix<f64>) -> Result<f64> {
    square(w, "log_det_pd")?;
    let chol = Cholesky::new(w.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..w.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        acc += d.ln();
    }
    Ok(2.0 * acc)
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn inverse_pd(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    square(w, "inverse_pd")?;
    let chol = Cholesky::new(w.clone()).ok_or(Error::NotPositiveDefinite)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(inv)
}

pub fn is_pd(w: &DMatrix<f64>) -> bool {
    w.is_square() && Cholesky::new(w.clone()).is_some()
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let m = a.nrows();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let m = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on
/// the Rayleigh quotient, stopped at relative change `1e-8`.
pub fn spectral_norm(w: &DMatrix<f64>) -> f64 {
    let m = w.nrows();
    if m == 0 {
        return 0.0;
    }
    // Slightly non-uniform start so that symmetric structures do not hide the top eigenvector.
    let mut v = DVector::from_fn(m, |i, _| 1.0 + 1e-3 * (i as f64 + 1.0) / m as f64);
    v /= v.norm();
    let mut estimate = 0.0_f64;
    for _ in 0..100_000 {
        let wv = w * &v;
        let norm = wv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = wv / norm;
        if (next - estimate).abs() <= 1e-8 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Max-norm of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `Tr(A B)` for square matrices of equal size without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = NeumaierSum::default();
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc.add(a[(i, k)] * b[(k, i)]);
        }
    }
    acc.total()
}

/// `X^T X / n` for an `n x m` matrix.
pub fn cross_product(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut s = x.tr_mul(x);
    s /= n;
    symmetrize(&mut s);
    s
}

/// Compensated summation; objective values are large sums of small terms.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

fn square(w: &DMatrix<f64>, what: &str) -> Result<()> {
    if w.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: expected a square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_examples() {
        assert_eq!(log_det_pd(&DMatrix::identity(4, 4)).unwrap(), 0.0);
        let two = DMatrix::identity(3, 3) * 2.0;
        assert!((log_det_pd(&two).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((log_det_pd(&a).unwrap() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_det_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(log_det_pd(&a), Err(Error::NotPositiveDefinite)));
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(log_det_pd(&rect), Err(Error::Dimension(_))));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert!((spectral_norm(&w) - 4.0).abs() < 1e-7);
        assert!((spectral_norm(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_eigen() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -0.5, 0.1, -0.5, 1.5, 0.3, 0.1, 0.3, 1.0]);
        let top = a.clone().symmetric_eigen().eigenvalues.max();
        assert!((spectral_norm(&a) - top).abs() < 1e-6 * top);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let s: NeumaierSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.total(), 1.0);
    }
}
