//! Image quality metrics.

use crate::error::{Error, Result};

/// Mean squared error between equally sized slices.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(&[a.len()], &[b.len()]));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("mse of empty signals".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB, `10·log10(peak² / MSE)`.
///
/// Identical inputs give `f64::INFINITY`, which callers treat as the
/// "perfect reconstruction" marker.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be > 0, got {peak}")));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(psnr_from_mse(err, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR over two tensors, requiring identical shapes.
pub fn psnr_tensor(a: &crate::Tensor, b: &crate::Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    psnr(a.data(), b.data(), peak)
}
