//! Training loops: the two denoiser stages and the position slice model.
//!
//! Both stages minimize mean squared error between predicted and true noise
//! on randomly drawn windows. The slice stage updates everything except the
//! depth-axis layers with an independent timestep per slice; the volumetric
//! stage draws one shared timestep per window and updates only the
//! depth-axis layers, leaving every other parameter bit-unchanged.

use ndarray::{s, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{is_volumetric_param, DenoiserModel, SliceModel, Stage};
use crate::conditioning::{build_condition_stack, select_informed_self};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Layer, Optimizer, OptimizerKind};
use crate::phantom::{read_mask, read_volume, DatasetManifest, MaskVolume, Split, Volume};
use crate::schedule::Schedule;
use crate::seeds::rng_from_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Volumes per batch (b_v); the slice batch is b_v·n.
    pub batch_volumes: usize,
    /// Window length n in slices.
    pub window: usize,
    pub learning_rate: f64,
    pub stage: Stage,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling; absent means no clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::validation("iterations", "must be at least 1"));
        }
        if self.batch_volumes < 1 {
            return Err(Error::validation("batch_volumes", "must be at least 1"));
        }
        if self.window < 2 {
            return Err(Error::validation("window", "must be at least 2 slices"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be positive and finite"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::validation("grad_clip", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// One training example source: a resident volume with its mask.
struct TrainItem {
    id: String,
    volume: Volume,
    mask: MaskVolume,
}

/// Load the train split into memory, checking that every volume is deep
/// enough to host at least one window and that spatial extents agree.
fn load_train_split(manifest: &DatasetManifest, window: usize) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    for e in manifest.split_entries(Split::Train) {
        let volume = read_volume(manifest.volume_path(e))?;
        let mask = read_mask(manifest.mask_path(e))?;
        if volume.depth() < window {
            return Err(Error::validation(
                "window",
                format!("entry {} has {} slices, shorter than the window {}", e.id, volume.depth(), window),
            ));
        }
        items.push(TrainItem { id: e.id.clone(), volume, mask });
    }
    if items.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    let (h0, w0, _) = items[0].volume.dims();
    for it in &items {
        let (h, w, _) = it.volume.dims();
        if (h, w) != (h0, w0) {
            return Err(Error::shape("train volumes", format!("{h0}x{w0}"), format!("{h}x{w}")));
        }
    }
    Ok(items)
}

/// Train one denoiser stage. Returns the per-iteration loss trace.
pub fn train_stage(
    model: &mut DenoiserModel,
    manifest: &DatasetManifest,
    schedule: &Schedule,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.stage == Stage::Volumetric && model.training_step() == 0 {
        return Err(Error::validation(
            "stage",
            "volumetric stage requires a slice-stage-trained model",
        ));
    }
    let items = load_train_split(manifest, config.window)?;
    let (h, w, _) = items[0].volume.dims();
    let (b_v, n) = (config.batch_volumes, config.window);
    let b = b_v * n;
    let c_in = model.descriptor().in_channels;
    let t_max = schedule.t_steps();
    let volumetric = config.stage == Stage::Volumetric;
    let mut rng = rng_from_seed(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let filter: &dyn Fn(&str) -> bool = if volumetric {
        &is_volumetric_param
    } else {
        &|name| !is_volumetric_param(name)
    };

    let mut trace = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let mut x = Array4::<f32>::zeros((b, c_in, h, w));
        let mut eps = Array4::<f32>::zeros((b, 1, h, w));
        let mut t_vec = Vec::with_capacity(b);
        for v in 0..b_v {
            let item = &items[rng.random_range(0..items.len())];
            let z = item.volume.depth();
            let j = rng.random_range(0..=z - n);
            let (informed, provenance) = select_informed_self(&item.volume, j, n, &item.id, &mut rng);
            let cond = build_condition_stack(
                item.mask.data().slice(s![j..j + n, .., ..]),
                informed.view(),
                model.mask_encoding(),
                model.encoder(),
                provenance,
            )?;
            let c_m = cond.mask_channels.dim().1;
            // One shared timestep per window in the volumetric stage,
            // an independent one per slice otherwise.
            let t_window = 1 + rng.random_range(0..t_max);
            for k in 0..n {
                let row = v * n + k;
                let t = if volumetric { t_window } else { 1 + rng.random_range(0..t_max) };
                t_vec.push(t);
                let mut e = Array2::<f32>::zeros((h, w));
                e.mapv_inplace(|_| rng.sample::<f32, _>(StandardNormal));
                let x0 = item.volume.slice(j + k).to_owned();
                let noisy = schedule.forward_diffuse(&x0, t, &e)?;
                x.slice_mut(s![row, 0, .., ..]).assign(&noisy);
                eps.slice_mut(s![row, 0, .., ..]).assign(&e);
                x.slice_mut(s![row, 1..1 + c_m, .., ..])
                    .assign(&cond.mask_channels.index_axis(ndarray::Axis(0), k));
                x.slice_mut(s![row, 1 + c_m.., .., ..])
                    .assign(&cond.informed_channels.index_axis(ndarray::Axis(0), k));
            }
        }
        let depth = volumetric.then_some((b_v, n));
        let unet = model.unet_mut();
        unet.zero_grads();
        let pred = unet.forward(&x, &t_vec, None, depth)?;
        let len = pred.len() as f64;
        let loss = pred
            .iter()
            .zip(eps.iter())
            .map(|(&p, &e)| {
                let d = (p - e) as f64;
                d * d
            })
            .sum::<f64>()
            / len;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, value: loss });
        }
        let gout = (&pred - &eps) * (2.0 / len) as f32;
        unet.backward(&gout);
        if let Some(c) = config.grad_clip {
            clip_grad_norm(unet, c);
        }
        opt.step(unet, filter);
        trace.push(loss);
        model.set_training_step(model.training_step() + 1);
    }
    model.set_stage(config.stage);
    Ok(trace)
}

/// Train the position-conditioned slice model: batches of b_v·n independent
/// slices at positions p = k/(Z−1), each with its own timestep.
pub fn train_position_slice_model(
    model: &mut SliceModel,
    manifest: &DatasetManifest,
    schedule: &Schedule,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let items = load_train_split(manifest, config.window)?;
    let (h, w, _) = items[0].volume.dims();
    let b = config.batch_volumes * config.window;
    let t_max = schedule.t_steps();
    let mut rng = rng_from_seed(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);

    let mut trace = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let mut x = Array3::<f32>::zeros((b, h, w));
        let mut eps = Array3::<f32>::zeros((b, h, w));
        let mut t_vec = Vec::with_capacity(b);
        let mut p_vec = Vec::with_capacity(b);
        for row in 0..b {
            let item = &items[rng.random_range(0..items.len())];
            let z = item.volume.depth();
            let k = rng.random_range(0..z);
            p_vec.push(if z > 1 { k as f64 / (z - 1) as f64 } else { 0.0 });
            let t = 1 + rng.random_range(0..t_max);
            t_vec.push(t);
            let mut e = Array2::<f32>::zeros((h, w));
            e.mapv_inplace(|_| rng.sample::<f32, _>(StandardNormal));
            let noisy = schedule.forward_diffuse(&item.volume.slice(k).to_owned(), t, &e)?;
            x.slice_mut(s![row, .., ..]).assign(&noisy);
            eps.slice_mut(s![row, .., ..]).assign(&e);
        }
        let pred = {
            let unet = model.unet_mut();
            unet.zero_grads();
            let xin = x.insert_axis(ndarray::Axis(1));
            unet.forward(&xin, &t_vec, Some(&p_vec), None)?
        };
        let len = pred.len() as f64;
        let eps4 = eps.insert_axis(ndarray::Axis(1));
        let loss = pred
            .iter()
            .zip(eps4.iter())
            .map(|(&p, &e)| {
                let d = (p - e) as f64;
                d * d
            })
            .sum::<f64>()
            / len;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, value: loss });
        }
        let gout = (&pred - &eps4) * (2.0 / len) as f32;
        let unet = model.unet_mut();
        unet.backward(&gout);
        if let Some(c) = config.grad_clip {
            clip_grad_norm(unet, c);
        }
        opt.step(unet, &|_| true);
        trace.push(loss);
        model.set_training_step(model.training_step() + 1);
    }
    Ok(trace)
}
