//! Minimal dense linear algebra for small (asset-count sized) matrices.
//!
//! Matrices are row-major `Vec<f64>` of length d*d. Everything here assumes
//! d is tiny (a handful of assets), so O(d^3) direct methods are used
//! throughout.

use crate::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mat_vec(d: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// v^T M v for a d x d matrix.
pub(crate) fn quad_form(d: usize, m: &[f64], v: &[f64]) -> f64 {
    (0..d).map(|i| v[i] * dot(&m[i * d..(i + 1) * d], v)).sum()
}

pub(crate) fn mat_mul(d: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub(crate) fn transpose(d: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Fails with a singularity error when a pivot is not strictly positive.
pub(crate) fn cholesky(d: usize, m: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Singular(format!(
                        "matrix is not positive definite (pivot {s:.3e} at row {i})"
                    )));
                }
                l[i * d + j] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Solves M x = rhs for symmetric positive definite M via Cholesky.
pub(crate) fn solve_spd(d: usize, m: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(d, m)?;
    // forward: L y = rhs
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    // backward: L^T x = y
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Ok(x)
}
