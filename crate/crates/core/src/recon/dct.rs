//! Orthonormal DCT-II on square blocks.

use crate::error::{Error, Result};

/// `B×B` orthonormal DCT-II matrix, row `k` holding basis function `k`.
pub fn dct_matrix(b: usize) -> Vec<f64> {
    let mut c = vec![0.0; b * b];
    let bf = b as f64;
    for k in 0..b {
        let alpha = if k == 0 { (1.0 / bf).sqrt() } else { (2.0 / bf).sqrt() };
        for n in 0..b {
            c[k * b + n] = alpha * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2.0 * bf)).cos();
        }
    }
    c
}

fn check(block: &[f64], b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    if block.len() != b * b {
        return Err(Error::shape(&[b, b], &[block.len()]));
    }
    Ok(())
}

/// `C X Cᵀ` for a row-major block.
pub fn dct2_forward(block: &[f64], b: usize) -> Result<Vec<f64>> {
    check(block, b)?;
    Ok(separable(block, b, &dct_matrix(b), false))
}

/// `Cᵀ Θ C`, the exact inverse of [`dct2_forward`].
pub fn dct2_inverse(coeffs: &[f64], b: usize) -> Result<Vec<f64>> {
    check(coeffs, b)?;
    Ok(separable(coeffs, b, &dct_matrix(b), true))
}

fn separable(x: &[f64], b: usize, c: &[f64], transpose: bool) -> Vec<f64> {
    let m = |i: usize, j: usize| if transpose { c[j * b + i] } else { c[i * b + j] };
    // rows then columns
    let mut tmp = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            tmp[i * b + j] = (0..b).map(|k| m(i, k) * x[k * b + j]).sum();
        }
    }
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            out[i * b + j] = (0..b).map(|k| tmp[i * b + k] * m(j, k)).sum();
        }
    }
    out
}

/// Synthesis matrix `Ψ` (`N×N`, `N = B²`): column `q` is the inverse DCT of unit coefficient `q`.
pub(crate) fn synthesis_matrix(b: usize) -> Vec<f64> {
    let c = dct_matrix(b);
    let n = b * b;
    let mut psi = vec![0.0; n * n];
    for i in 0..b {
        for j in 0..b {
            for k in 0..b {
                for l in 0..b {
                    psi[(i * b + j) * n + k * b + l] = c[k * b + i] * c[l * b + j];
                }
            }
        }
    }
    psi
}
