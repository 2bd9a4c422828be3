//! Mask- and informed-slice-conditioned volume diffusion for 3D image
//! synthesis.
//!
//! The crate trains small 2D slice denoisers with pseudo-3D (depth-axis)
//! layers on procedurally generated phantom volumes, then assembles full
//! volumes window-by-window with a bi-directional autoregressive sampler that
//! pins already-generated boundary slices via overlap inpainting. Conditioning
//! is a per-slice anatomical mask plus an "informed" style slice that carries
//! appearance (e.g. contrast level) into the synthesis.
//!
//! Module map:
//! - [`phantom`]: procedural 3D phantoms, volume/mask file formats, dataset
//!   manifests and splits.
//! - [`schedule`]: diffusion noise schedule and forward corruption.
//! - [`volumetric`]: depth-axis rearrangement for pseudo-3D layers.
//! - [`nn`]: the small neural-net layer zoo with manual backprop.
//! - [`model`]: denoiser architecture, two-stage training, checkpoints,
//!   gradient checking.
//! - [`conditioning`]: condition-stack assembly (mask + informed channels).
//! - [`sampler`]: DDPM/DDIM steps, window planning, overlap-inpainted
//!   bi-directional volume assembly.
//! - [`augment`]: 3D mask augmentation.
//! - [`metrics`]: MS-SSIM, feature-space Fréchet distance, Dice, volume
//!   consistency.

pub mod augment;
pub mod conditioning;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod sampler;
pub mod schedule;
pub mod seeds;
pub mod volumetric;

pub use error::{Error, Result};
