//! Privacy-preserving video classification in the compressed domain.
//!
//! Video clips are split into `B×B` blocks and every block is measured with a
//! key-seeded sensing matrix (`y = Φx`). The per-block measurement vectors are
//! stacked along the channel axis and fed to a small 3D ConvNet built from
//! inflated Inception blocks. A sparse reconstruction oracle quantifies how
//! much a holder of the right key recovers compared to a holder of a wrong one.
//!
//! Module map:
//!
//! - [`tensor`], [`rng`], [`metrics`]: dense tensors, SplitMix64 randomness, PSNR.
//! - [`sensing`]: the measurement-matrix families and block encoding.
//! - [`packing`]: clip padding, channel-stacked packing and the raw file formats.
//! - [`nn`]: the 3D ConvNet, its exact backward pass, ADAM and the training loop.
//! - [`recon`]: DCT basis, ISTA solver and the correct-key/wrong-key PSNR gap.
//! - [`data`]: synthetic action/fall clips, windowing, resizing and manifests.

pub mod bytes;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod packing;
pub mod recon;
pub mod rng;
pub mod sensing;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
