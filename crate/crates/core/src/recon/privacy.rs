//! Correct-key versus wrong-key reconstruction quality.

use serde::{Deserialize, Serialize};

use super::ista::{ReconConfig, Reconstructor};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::packing::{pack_clip, pad_clip, MeasurementTensor, VideoClip, COLORS};
use crate::sensing::SensingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// PSNR (peak 1) of the correct-key reconstruction; `inf` when exact.
    pub psnr_true: f64,
    pub psnr_wrong: f64,
    /// `psnr_true − psnr_wrong`, with equal values (including two infinities) giving 0.
    pub gap: f64,
}

impl PrivacyReport {
    pub fn new(psnr_true: f64, psnr_wrong: f64) -> Self {
        let gap = if psnr_true == psnr_wrong { 0.0 } else { psnr_true - psnr_wrong };
        PrivacyReport {
            psnr_true,
            psnr_wrong,
            gap,
        }
    }
}

/// Reconstruct a packed tensor into `T×height×width×3` unit-range pixels.
///
/// `height`/`width` crop away the edge padding added before packing. Values are
/// not clamped.
pub fn reconstruct_clip(
    mt: &MeasurementTensor,
    phi: &SensingMatrix,
    cfg: &ReconConfig,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    let [t, hb, wb, c] = mt.dims();
    let (b, m, n) = (phi.block(), phi.rows(), phi.cols());
    if mt.block != b || c != COLORS * m {
        return Err(Error::Geometry(format!(
            "tensor (B = {}, C = {c}) does not match matrix (B = {b}, M = {m})",
            mt.block
        )));
    }
    if height > hb * b || width > wb * b || height == 0 || width == 0 {
        return Err(Error::Geometry(format!(
            "crop {height}×{width} exceeds the measured area {}×{}",
            hb * b,
            wb * b
        )));
    }
    // Channel layout c·M + m regroups into (t, i, j, color) rows of length M.
    let count = t * hb * wb * COLORS;
    let sol = Reconstructor::new(phi, cfg)?.reconstruct(mt.tensor().data(), count)?;
    let mut out = vec![0.0; t * height * width * COLORS];
    for ti in 0..t {
        for bi in 0..hb {
            for bj in 0..wb {
                for color in 0..COLORS {
                    let row = ((ti * hb + bi) * wb + bj) * COLORS + color;
                    let blk = &sol.blocks[row * n..][..n];
                    for r in 0..b {
                        let y = bi * b + r;
                        if y >= height {
                            break;
                        }
                        for cc in 0..b {
                            let x = bj * b + cc;
                            if x >= width {
                                break;
                            }
                            out[((ti * height + y) * width + x) * COLORS + color] = blk[r * b + cc];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Encode `clip` with `true_phi`, decode with both matrices, and compare.
pub fn privacy_gap(
    clip: &VideoClip,
    true_phi: &SensingMatrix,
    wrong_phi: &SensingMatrix,
    cfg: &ReconConfig,
) -> Result<PrivacyReport> {
    if true_phi.rows() != wrong_phi.rows() || true_phi.block() != wrong_phi.block() {
        return Err(Error::Geometry(format!(
            "matrices differ in shape: {}×{} vs {}×{}",
            true_phi.rows(),
            true_phi.cols(),
            wrong_phi.rows(),
            wrong_phi.cols()
        )));
    }
    let mt = pack_clip(&pad_clip(clip, true_phi.block()), true_phi)?;
    let reference = clip.to_unit();
    let (h, w) = (clip.height(), clip.width());
    let good = reconstruct_clip(&mt, true_phi, cfg, h, w)?;
    let psnr_true = psnr(&good, &reference, 1.0)?;
    let psnr_wrong = if wrong_phi.entries() == true_phi.entries() {
        psnr_true
    } else {
        psnr(&reconstruct_clip(&mt, wrong_phi, cfg, h, w)?, &reference, 1.0)?
    };
    Ok(PrivacyReport::new(psnr_true, psnr_wrong))
}

/// [`privacy_gap`] against several wrong keys, reconstructing the correct arm once.
pub fn privacy_sweep(
    clip: &VideoClip,
    true_phi: &SensingMatrix,
    wrong_seeds: &[u64],
    cfg: &ReconConfig,
) -> Result<Vec<PrivacyReport>> {
    let mt = pack_clip(&pad_clip(clip, true_phi.block()), true_phi)?;
    let reference = clip.to_unit();
    let (h, w) = (clip.height(), clip.width());
    let psnr_true = psnr(&reconstruct_clip(&mt, true_phi, cfg, h, w)?, &reference, 1.0)?;
    wrong_seeds
        .iter()
        .map(|&seed| {
            let wrong = true_phi.with_seed(seed)?;
            let psnr_wrong = if wrong.entries() == true_phi.entries() {
                psnr_true
            } else {
                psnr(&reconstruct_clip(&mt, &wrong, cfg, h, w)?, &reference, 1.0)?
            };
            Ok(PrivacyReport::new(psnr_true, psnr_wrong))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{Family, SensingConfig};

    /// Flat background with one bright rectangle per frame.
    fn blocky_clip(t: usize, h: usize, w: usize) -> VideoClip {
        let mut clip = VideoClip::filled(t, h, w, 60);
        for ti in 0..t {
            for y in 8 + ti..24 + ti {
                for x in 10..30 {
                    for c in 0..COLORS {
                        clip.set_pixel(ti, y, x, c, 200 - 20 * c as u8);
                    }
                }
            }
        }
        clip
    }

    #[test]
    fn same_key_gives_zero_gap() {
        let phi = SensingMatrix::gaussian(16, 64, 5).unwrap();
        let phi = SensingMatrix::build(&SensingConfig { block: 8, ..*phi.config() }).unwrap();
        let r = privacy_gap(&blocky_clip(2, 32, 32), &phi, &phi.clone(), &ReconConfig::default()).unwrap();
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn wrong_key_is_worse() {
        let cfg = SensingConfig::for_ratio(Family::Gaussian, 16, 4, 1).unwrap();
        let phi = SensingMatrix::build(&cfg).unwrap();
        let wrong = phi.with_seed(2).unwrap();
        let rc = ReconConfig {
            iterations: 1000,
            ..ReconConfig::default()
        };
        let r = privacy_gap(&blocky_clip(2, 40, 36), &phi, &wrong, &rc).unwrap();
        assert!(r.gap > 6.0, "{r:?}");
    }

    #[test]
    fn sweep_matches_single_runs() {
        let cfg = SensingConfig::for_ratio(Family::Bernoulli, 8, 4, 3).unwrap();
        let phi = SensingMatrix::build(&cfg).unwrap();
        let clip = blocky_clip(1, 32, 32);
        let rc = ReconConfig::default();
        let sweep = privacy_sweep(&clip, &phi, &[3, 4, 5], &rc).unwrap();
        assert_eq!(sweep[0].gap, 0.0);
        for (r, seed) in sweep.iter().zip([3, 4, 5]) {
            assert_eq!(*r, privacy_gap(&clip, &phi, &phi.with_seed(seed).unwrap(), &rc).unwrap());
        }
    }

    #[test]
    fn identity_reconstruction_is_exact() {
        let phi = SensingMatrix::identity(8).unwrap();
        let r = privacy_gap(&blocky_clip(2, 30, 30), &phi, &phi, &ReconConfig::default()).unwrap();
        assert_eq!(r.psnr_true, f64::INFINITY);
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn mismatched_matrices_rejected() {
        let a = SensingMatrix::build(&SensingConfig::for_ratio(Family::Gaussian, 8, 4, 1).unwrap()).unwrap();
        let b = SensingMatrix::build(&SensingConfig::for_ratio(Family::Gaussian, 8, 16, 1).unwrap()).unwrap();
        assert!(matches!(
            privacy_gap(&blocky_clip(1, 32, 32), &a, &b, &ReconConfig::default()),
            Err(Error::Geometry(_))
        ));
    }
}
