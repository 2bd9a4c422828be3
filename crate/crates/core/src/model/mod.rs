//! Denoising models: the window denoiser (mask + informed-slice conditioned,
//! with depth-axis mixing) and the position-conditioned single-slice model.
//!
//! Both wrap the same encoder–decoder body ([`UNet`]); the wrappers fix the
//! channel layout, own the condition encodings, and carry bookkeeping that
//! checkpoints must round-trip.

mod checkpoint;
mod gradcheck;
mod train;
mod unet;

pub use checkpoint::{
    load_denoiser, load_slice_model, save_denoiser, save_slice_model, CheckpointMeta, ModelKind,
};
pub use gradcheck::{gradient_check, run_standard_gradient_check, GradCheckReport, GradCheckSample, WorstParam};
pub use train::{train_position_slice_model, train_stage, TrainConfig};
pub use unet::{is_volumetric_param, Descriptor, UNet};

use ndarray::{s, Array3, Array4, Axis};

use crate::conditioning::{ConditionStack, Encoder, MaskEncoding};
use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

/// Which training stage a denoiser checkpoint has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Slice,
    Volumetric,
}

/// Window denoiser: input channels are [noisy slice | mask | informed slice],
/// output is the predicted noise for the slice channel.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    unet: UNet<f32>,
    mask_encoding: MaskEncoding,
    encoder: Encoder,
    stage: Stage,
    training_step: u64,
}

impl DenoiserModel {
    /// Fresh model; `seed` fixes the weight draw.
    pub fn init(
        base_channels: usize,
        emb_dim: usize,
        mask_encoding: MaskEncoding,
        encoder: Encoder,
        seed: u64,
    ) -> Result<Self> {
        let desc = Descriptor {
            in_channels: 1 + mask_encoding.channels() + encoder.channels(),
            target_channels: 1,
            base_channels,
            emb_dim,
            position_conditioned: false,
            volumetric: true,
        };
        let mut rng = rng_from_seed(seed);
        Ok(DenoiserModel {
            unet: UNet::new(&desc, &mut rng)?,
            mask_encoding,
            encoder,
            stage: Stage::Slice,
            training_step: 0,
        })
    }

    pub fn descriptor(&self) -> &Descriptor {
        self.unet.descriptor()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }

    pub fn mask_encoding(&self) -> &MaskEncoding {
        &self.mask_encoding
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn training_step(&self) -> u64 {
        self.training_step
    }

    pub fn set_training_step(&mut self, step: u64) {
        self.training_step = step;
    }

    pub fn unet(&self) -> &UNet<f32> {
        &self.unet
    }

    /// Direct body access for training loops (visitor, raw batched forward).
    pub fn unet_mut(&mut self) -> &mut UNet<f32> {
        &mut self.unet
    }

    /// Stack a noisy window (n, h, w) with its conditions into the model
    /// input layout (n, 1 + c_mask + c_informed, h, w). Channel 0 is the
    /// noisy slice; mask channels follow; informed channels last.
    pub fn stack_input(&self, noisy: &Array3<f32>, cond: &ConditionStack) -> Result<Array4<f32>> {
        let (n, h, w) = noisy.dim();
        if cond.window_len() != n {
            return Err(Error::shape("condition stack", n.to_string(), cond.window_len().to_string()));
        }
        let (c_m, c_i) = (cond.mask_channels.dim().1, cond.informed_channels.dim().1);
        if cond.mask_channels.dim() != (n, c_m, h, w) || cond.informed_channels.dim() != (n, c_i, h, w) {
            return Err(Error::shape(
                "condition channels",
                format!("({n}, _, {h}, {w})"),
                format!("{:?} / {:?}", cond.mask_channels.dim(), cond.informed_channels.dim()),
            ));
        }
        if 1 + c_m + c_i != self.descriptor().in_channels {
            return Err(Error::shape(
                "input channels",
                self.descriptor().in_channels.to_string(),
                (1 + c_m + c_i).to_string(),
            ));
        }
        let mut x = Array4::zeros((n, 1 + c_m + c_i, h, w));
        x.slice_mut(s![.., 0, .., ..]).assign(noisy);
        x.slice_mut(s![.., 1..1 + c_m, .., ..]).assign(&cond.mask_channels);
        x.slice_mut(s![.., 1 + c_m.., .., ..]).assign(&cond.informed_channels);
        Ok(x)
    }

    /// Predicted noise for one window at timestep `t`. With `volumetric`
    /// the depth-axis layers see the window as one volume of n slices;
    /// without it every slice is denoised independently.
    pub fn predict_noise(
        &mut self,
        noisy: &Array3<f32>,
        cond: &ConditionStack,
        t: usize,
        volumetric: bool,
    ) -> Result<Array3<f32>> {
        let n = noisy.dim().0;
        let x = self.stack_input(noisy, cond)?;
        let depth = volumetric.then_some((1, n));
        let eps = self.unet.forward(&x, &vec![t; n], None, depth)?;
        Ok(eps.remove_axis(Axis(1)))
    }
}

/// Position-conditioned slice model: unconditional in content, steered only
/// by the normalized depth position p ∈ [0, 1].
#[derive(Debug, Clone)]
pub struct SliceModel {
    unet: UNet<f32>,
    training_step: u64,
}

impl SliceModel {
    pub fn init(base_channels: usize, emb_dim: usize, seed: u64) -> Result<Self> {
        let desc = Descriptor {
            in_channels: 1,
            target_channels: 1,
            base_channels,
            emb_dim,
            position_conditioned: true,
            volumetric: false,
        };
        let mut rng = rng_from_seed(seed);
        Ok(SliceModel {
            unet: UNet::new(&desc, &mut rng)?,
            training_step: 0,
        })
    }

    pub fn descriptor(&self) -> &Descriptor {
        self.unet.descriptor()
    }

    pub fn training_step(&self) -> u64 {
        self.training_step
    }

    pub fn set_training_step(&mut self, step: u64) {
        self.training_step = step;
    }

    pub fn unet(&self) -> &UNet<f32> {
        &self.unet
    }

    pub fn unet_mut(&mut self) -> &mut UNet<f32> {
        &mut self.unet
    }

    /// Predicted noise for a batch of slices (b, h, w) at per-slice
    /// timesteps and positions.
    pub fn predict_noise(&mut self, noisy: &Array3<f32>, t: &[usize], p: &[f64]) -> Result<Array3<f32>> {
        let x = noisy.clone().insert_axis(Axis(1));
        let eps = self.unet.forward(&x, t, Some(p), None)?;
        Ok(eps.remove_axis(Axis(1)))
    }
}
