// SPDX-License-Identifier: MIT OR Apache-2.0

//! Allocation-free dense kernels for the tiny (d ≤ a handful) matrices that
//! appear once per observation. All matrices are row-major slices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CpdError, Result};

/// `out = m mᵀ` for an `rows × cols` matrix `m`; `out` is `rows × rows`.
pub fn outer_self(m: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for i in 0..rows {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..cols {
                s += m[i * cols + k] * m[j * cols + k];
            }
            out[i * rows + j] = s;
            out[j * rows + i] = s;
        }
    }
}

/// In-place lower Cholesky factor. Returns `false` when the matrix is not
/// numerically positive definite.
pub fn cholesky(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    true
}

/// log det of the matrix whose Cholesky factor is `l`.
pub fn cholesky_logdet(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| l[i * d + i].ln()).sum::<f64>() * 2.0
}

/// Solves `L y = v` in place.
pub fn forward_solve(l: &[f64], d: usize, v: &mut [f64]) {
    for i in 0..d {
        let mut s = v[i];
        for k in 0..i {
            s -= l[i * d + k] * v[k];
        }
        v[i] = s / l[i * d + i];
    }
}

/// Solves `Lᵀ y = v` in place.
pub fn backward_solve_t(l: &[f64], d: usize, v: &mut [f64]) {
    for i in (0..d).rev() {
        let mut s = v[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * v[k];
        }
        v[i] = s / l[i * d + i];
    }
}

/// Solves `(L Lᵀ) y = v` in place.
pub fn cholesky_solve(l: &[f64], d: usize, v: &mut [f64]) {
    forward_solve(l, d, v);
    backward_solve_t(l, d, v);
}

/// Solves the general square system `m y = v` in place by Gaussian
/// elimination with partial pivoting. `m` is overwritten.
pub fn lu_solve(m: &mut [f64], d: usize, v: &mut [f64]) -> bool {
    for col in 0..d {
        let mut piv = col;
        let mut best = m[col * d + col].abs();
        for row in (col + 1)..d {
            let cand = m[row * d + col].abs();
            if cand > best {
                best = cand;
                piv = row;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..d {
                m.swap(col * d + k, piv * d + k);
            }
            v.swap(col, piv);
        }
        let p = m[col * d + col];
        for row in (col + 1)..d {
            let f = m[row * d + col] / p;
            if f != 0.0 {
                for k in col..d {
                    m[row * d + k] -= f * m[col * d + k];
                }
                v[row] -= f * v[col];
            }
        }
    }
    for row in (0..d).rev() {
        let mut s = v[row];
        for k in (row + 1)..d {
            s -= m[row * d + k] * v[k];
        }
        v[row] = s / m[row * d + row];
    }
    true
}

/// Eigenvalue floor below which a weight matrix counts as singular,
/// relative to its largest eigenvalue.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetric inverse square root via eigendecomposition.
///
/// Fails when the smallest eigenvalue is below `EIGEN_FLOOR` times the
/// largest, i.e. when the condition number exceeds 10¹².
pub fn inverse_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > EIGEN_FLOOR * max) {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(CpdError::SingularWeight { condition });
    }
    let q = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let out = q * inv_sqrt * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}
