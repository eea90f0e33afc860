//! Dense complex helpers shared by the calibration code.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

const ONE: [f64; 2] = [1.0, 0.0];
const ZERO: [f64; 2] = [0.0, 0.0];

fn as_c64(s: &[Complex64]) -> *const [f64; 2] {
    s.as_ptr() as *const [f64; 2]
}

/// `C = A B` for row-major `A (m x k)` and `B (k x n)`.
pub(crate) fn matmul(a: &[Complex64], m: usize, k: usize, b: &[Complex64], n: usize) -> Vec<Complex64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![Complex64::new(0.0, 0.0); m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex64 is repr(C) with two f64 fields, matching [f64; 2];
    // the slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            ONE,
            as_c64(a),
            k as isize,
            1,
            as_c64(b),
            n as isize,
            1,
            ZERO,
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    c
}

/// `Aᴴ B` for row-major `A (rows x m)` and `B (rows x n)`.
pub(crate) fn matmul_ah_b(a: &[Complex64], rows: usize, m: usize, b: &[Complex64], n: usize) -> Vec<Complex64> {
    assert_eq!(a.len(), rows * m);
    assert_eq!(b.len(), rows * n);
    let mut c = vec![Complex64::new(0.0, 0.0); m * n];
    if rows == 0 || m == 0 || n == 0 {
        return c;
    }
    let a_conj: Vec<Complex64> = a.iter().map(|v| v.conj()).collect();
    // SAFETY: as in `matmul`; A is read transposed through swapped strides.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            rows,
            n,
            ONE,
            as_c64(&a_conj),
            1,
            m as isize,
            as_c64(b),
            n as isize,
            1,
            ZERO,
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    c
}

/// Solve `(G + λ·tr(G)/n·I) X = R` for Hermitian PSD `G (n x n)`, row-major.
pub(crate) fn solve_ridge(gram: &[Complex64], n: usize, rhs: &[Complex64], k: usize, lambda: f64) -> Result<Vec<Complex64>> {
    let mut g = DMatrix::from_row_slice(n, n, gram);
    let trace: f64 = (0..n).map(|i| g[(i, i)].re).sum();
    let shift = lambda * trace / n as f64;
    for i in 0..n {
        g[(i, i)] += shift;
    }
    let r = DMatrix::from_row_slice(n, k, rhs);
    let max_diag = (0..n).map(|i| g[(i, i)].re).fold(0.0, f64::max);
    let chol = Cholesky::new(g).ok_or(Error::Singular)?;
    // Dependent columns survive the factorization with round-off-sized pivots.
    let tiny = n as f64 * f64::EPSILON * max_diag;
    if max_diag == 0.0 || (0..n).any(|i| chol.l_dirty()[(i, i)].re.powi(2) <= tiny) {
        return Err(Error::Singular);
    }
    let x = chol.solve(&r);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular);
    }
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            out.push(x[(i, j)]);
        }
    }
    Ok(out)
}
