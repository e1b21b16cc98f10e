//! Small dense linear algebra over [`Scalar`]. Matrices are row-major slices.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Condition numbers above this count as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// LU factors with partial pivoting of an `n x n` matrix.
#[derive(Clone, Debug)]
pub struct Lu<S> {
    n: usize,
    lu: Vec<S>,
    perm: Vec<usize>,
}

impl<S: Scalar> Lu<S> {
    pub fn new(a: &[S], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::dims(format!("LU of {} entries as {n}x{n}", a.len())));
        }
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| lu[i * n + c].modulus().total_cmp(&lu[j * n + c].modulus()))
                .expect("nonempty");
            if lu[p * n + c].modulus() == 0.0 {
                return Err(Error::SingularLinearPart { point: Vec::new(), condition: f64::INFINITY });
            }
            if p != c {
                for k in 0..n {
                    lu.swap(p * n + k, c * n + k);
                }
                perm.swap(p, c);
            }
            let piv = lu[c * n + c];
            for r in c + 1..n {
                let f = lu[r * n + c] / piv;
                lu[r * n + c] = f;
                for k in c + 1..n {
                    let t = lu[c * n + k];
                    lu[r * n + k] -= f * t;
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let t = x[c];
                x[r] -= self.lu[r * n + c] * t;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let t = x[c];
                x[r] -= self.lu[r * n + c] * t;
            }
            x[r] = x[r] / self.lu[r * n + r];
        }
        x
    }

    pub fn inverse(&self) -> Vec<S> {
        let n = self.n;
        let mut inv = vec![S::zero(); n * n];
        let mut e = vec![S::zero(); n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = S::zero());
            e[c] = S::one();
            for (r, v) in self.solve(&e).into_iter().enumerate() {
                inv[r * n + c] = v;
            }
        }
        inv
    }
}

fn to_dmatrix<S: Scalar>(a: &[S], rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |r, c| a[r * cols + c].to_c64())
}

/// Singular values in descending order.
pub fn singular_values<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<f64> {
    let m = to_dmatrix(a, rows, cols);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Operator 2-norm.
pub fn op_norm<S: Scalar>(a: &[S], rows: usize, cols: usize) -> f64 {
    if rows == 1 || cols == 1 {
        return a.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt();
    }
    singular_values(a, rows, cols).first().copied().unwrap_or(0.0)
}

/// `(||A^-1||_2, condition number)` of a square matrix.
pub fn inverse_norm<S: Scalar>(a: &[S], n: usize) -> (f64, f64) {
    if n == 1 {
        let m = a[0].modulus();
        return (1.0 / m, if m > 0.0 { 1.0 } else { f64::INFINITY });
    }
    let sv = singular_values(a, n, n);
    let (hi, lo) = (sv[0], sv[n - 1]);
    (1.0 / lo, hi / lo)
}

/// Factor `a` unless it is numerically singular.
pub fn checked_lu<S: Scalar>(a: &[S], n: usize, point: &[C64]) -> Result<Lu<S>> {
    let (_, cond) = inverse_norm(a, n);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::SingularLinearPart { point: crate::error::to_pairs(point), condition: cond });
    }
    Lu::new(a, n)
}

pub fn mat_vec<S: Scalar>(a: &[S], rows: usize, cols: usize, x: &[S]) -> Vec<S> {
    (0..rows)
        .map(|r| (0..cols).fold(S::zero(), |acc, c| acc + a[r * cols + c] * x[c]))
        .collect()
}

pub fn mat_mul<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for r in 0..n {
        for l in 0..k {
            let t = a[r * k + l];
            for c in 0..m {
                out[r * m + c] += t * b[l * m + c];
            }
        }
    }
    out
}

/// Cholesky test of positive definiteness of a real symmetric matrix;
/// pivots must exceed `tol` times the largest diagonal entry.
pub fn is_positive_definite(a: &[f64], n: usize, tol: f64) -> bool {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = 0.5 * (a[j * n + j] + a[j * n + j]);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol * scale) {
            return false;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = 0.5 * (a[i * n + j] + a[j * n + i]);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    true
}

/// Eigenvalues of the symmetric part of a real matrix, ascending.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_fn(n, n, |r, c| 0.5 * (a[r * n + c] + a[c * n + r]));
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
