//! Minimal dense complex linear algebra: LU factorization with partial
//! pivoting and the solves needed by the matrix exponential and the sliced
//! kernel evolution. Kept private; public API goes through `hilbert`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// LU factorization with partial pivoting, stored packed (L strictly below
/// the diagonal with implicit unit diagonal, U on and above).
pub(crate) struct Lu {
    lu: Array2<Complex64>,
    perm: Vec<usize>,
}

impl Lu {
    pub(crate) fn factor(a: &Array2<Complex64>) -> Result<Lu> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!(
                "LU requires a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            // Partial pivot: largest magnitude on or below the diagonal.
            let mut pivot_row = col;
            let mut pivot_mag = lu[[col, col]].norm();
            for row in col + 1..n {
                let mag = lu[[row, col]].norm();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = row;
                }
            }
            if pivot_mag == 0.0 {
                return Err(Error::Convergence(format!(
                    "LU pivot vanished at column {col}: matrix is singular to working precision"
                )));
            }
            if pivot_row != col {
                perm.swap(col, pivot_row);
                for j in 0..n {
                    let tmp = lu[[col, j]];
                    lu[[col, j]] = lu[[pivot_row, j]];
                    lu[[pivot_row, j]] = tmp;
                }
            }
            let inv_pivot = lu[[col, col]].inv();
            for row in col + 1..n {
                let factor = lu[[row, col]] * inv_pivot;
                lu[[row, col]] = factor;
                for j in col + 1..n {
                    let sub = factor * lu[[col, j]];
                    lu[[row, j]] -= sub;
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    /// Solve `A x = b` for one right-hand side.
    pub(crate) fn solve_vec(&self, b: &Array1<Complex64>) -> Array1<Complex64> {
        let n = self.lu.nrows();
        debug_assert_eq!(b.len(), n);
        let mut x = Array1::<Complex64>::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // Forward substitution with unit lower triangle.
        for i in 0..n {
            for j in 0..i {
                let sub = self.lu[[i, j]] * x[j];
                x[i] -= sub;
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            for j in i + 1..n {
                let sub = self.lu[[i, j]] * x[j];
                x[i] -= sub;
            }
            x[i] /= self.lu[[i, i]];
        }
        x
    }

    /// Solve `A X = B` column by column.
    pub(crate) fn solve_mat(&self, b: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.lu.nrows();
        debug_assert_eq!(b.nrows(), n);
        let mut x = Array2::<Complex64>::zeros((n, b.ncols()));
        for col in 0..b.ncols() {
            let rhs = b.column(col).to_owned();
            let sol = self.solve_vec(&rhs);
            x.column_mut(col).assign(&sol);
        }
        x
    }
}

/// Maximum absolute column sum (the induced 1-norm).
pub(crate) fn one_norm(a: &Array2<Complex64>) -> f64 {
    let mut best = 0.0f64;
    for col in a.columns() {
        let sum: f64 = col.iter().map(|z| z.norm()).sum();
        if sum > best {
            best = sum;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_complex::Complex64 as C;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn lu_solves_small_complex_system() {
        let a = array![
            [c(2.0, 1.0), c(0.0, -1.0), c(0.5, 0.0)],
            [c(0.0, 0.0), c(1.0, 0.0), c(3.0, -2.0)],
            [c(4.0, 0.0), c(-1.0, 1.0), c(0.0, 0.5)],
        ];
        let x_true = array![c(1.0, -1.0), c(0.0, 2.0), c(-3.0, 0.5)];
        let b = a.dot(&x_true);
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve_vec(&b);
        let err: f64 = x
            .iter()
            .zip(x_true.iter())
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "solve error {err}");
    }

    #[test]
    fn lu_rejects_singular() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(2.0, 0.0), c(4.0, 0.0)]];
        assert!(matches!(Lu::factor(&a), Err(Error::Convergence(_))));
    }

    #[test]
    fn matrix_solve_reproduces_inverse_action() {
        let a = array![[c(1.0, 0.5), c(0.2, 0.0)], [c(0.0, -0.3), c(2.0, 0.0)]];
        let b = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        let lu = Lu::factor(&a).unwrap();
        let inv = lu.solve_mat(&b);
        let prod = a.dot(&inv);
        let mut err = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
                err = err.max((prod[[i, j]] - want).norm());
            }
        }
        assert!(err < 1e-14, "A * A^-1 deviates from identity by {err}");
    }
}
