//! Sparse reconstruction from block measurements.
//!
//! Blocks are assumed compressible in the orthonormal 2D DCT basis and are
//! recovered with ISTA. Running the solver with the correct matrix and with a
//! wrong-key matrix gives an empirical privacy measure (the PSNR gap). This is
//! a measurement, not a security proof.

pub mod dct;
pub mod ista;
pub mod privacy;

pub use dct::{dct2_forward, dct2_inverse, dct_matrix};
pub use ista::{ista_reconstruct, ReconConfig, Reconstructor, Solution};
pub use privacy::{privacy_gap, privacy_sweep, reconstruct_clip, PrivacyReport};
