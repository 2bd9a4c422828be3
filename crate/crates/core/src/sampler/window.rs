//! Window-level reverse sampling with pinned-slice overlap inpainting, and
//! the position-conditioned single-slice sampler.

use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ddim_step, ddim_time_path, ddpm_step, Method, NoisePredictor, SamplerConfig};
use crate::conditioning::ConditionStack;
use crate::error::{Error, Result};
use crate::model::SliceModel;
use crate::schedule::Schedule;
use crate::seeds::rng_from_seed;

/// Clean latents to hold fixed at window-local positions during sampling.
#[derive(Debug, Clone)]
pub struct PinSpec {
    /// Window-local slice positions, each in [0, n).
    pub positions: Vec<usize>,
    /// Clean content per pinned position: (positions.len(), h, w).
    pub values: Array3<f32>,
}

impl PinSpec {
    pub fn validate(&self, n: usize, h: usize, w: usize) -> Result<()> {
        if self.values.dim() != (self.positions.len(), h, w) {
            return Err(Error::shape(
                "pin values",
                format!("({}, {h}, {w})", self.positions.len()),
                format!("{:?}", self.values.dim()),
            ));
        }
        for &p in &self.positions {
            if p >= n {
                return Err(Error::validation("pin", format!("position {p} outside window of {n}")));
            }
        }
        let mut seen = vec![false; n];
        for &p in &self.positions {
            if seen[p] {
                return Err(Error::validation("pin", format!("position {p} pinned twice")));
            }
            seen[p] = true;
        }
        Ok(())
    }
}

fn noise3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f32> {
    let mut a = Array3::zeros(shape);
    a.mapv_inplace(|_| rng.sample::<f32, _>(StandardNormal));
    a
}

/// Overwrite pinned positions with their forward-diffused clean content at
/// timestep `t_prev`: o = √ᾱ·o0 + √(1−ᾱ)·ε, with ε drawn fresh when the
/// reverse process is stochastic and zero otherwise.
fn overwrite_pins(
    w: &mut Array3<f32>,
    pin: &PinSpec,
    t_prev: usize,
    schedule: &Schedule,
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) {
    let ab = schedule.alpha_bar_or_one(t_prev);
    let (root_ab, root_1mab) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    for (i, &pos) in pin.positions.iter().enumerate() {
        let o0 = pin.values.slice(s![i, .., ..]);
        let mut dst = w.slice_mut(s![pos, .., ..]);
        if stochastic {
            dst.zip_mut_with(&o0, |d, &o| {
                let e: f32 = rng.sample(StandardNormal);
                *d = root_ab * o + root_1mab * e;
            });
        } else {
            dst.zip_mut_with(&o0, |d, &o| *d = root_ab * o);
        }
    }
}

/// Reverse-sample one window of n slices under the given conditions.
/// Pinned positions are overwritten after every step from their clean
/// content, so the final window agrees with the pins exactly; with
/// `overlapped_inpainting` disabled the pins are ignored entirely.
pub fn sample_window(
    predictor: &mut dyn NoisePredictor,
    cond: &ConditionStack,
    config: &SamplerConfig,
    pin: Option<&PinSpec>,
    schedule: &Schedule,
    seed: u64,
) -> Result<Array3<f32>> {
    let (n, _, h, w) = cond.mask_channels.dim();
    if let Some(p) = pin {
        p.validate(n, h, w)?;
    }
    let pin = if config.overlapped_inpainting { pin } else { None };
    let clip = config.clip_denoised.then_some((-1.0f32, 1.0f32));
    let mut rng = rng_from_seed(seed);
    let mut latent = noise3(&mut rng, (n, h, w));
    match config.method {
        Method::Ddpm => {
            for t in (1..=schedule.t_steps()).rev() {
                let eps_hat = predictor.predict(&latent, t, Some(cond))?;
                let z = (t > 1).then(|| noise3(&mut rng, (n, h, w)));
                latent = ddpm_step(&latent, &eps_hat, t, schedule, z.as_ref(), clip)?;
                if let Some(p) = pin {
                    overwrite_pins(&mut latent, p, t - 1, schedule, true, &mut rng);
                }
            }
        }
        Method::Ddim => {
            let path = ddim_time_path(schedule.t_steps(), config.ddim_steps)?;
            let stochastic = config.eta > 0.0;
            for (i, &t) in path.iter().enumerate() {
                let t_prev = path.get(i + 1).copied().unwrap_or(0);
                let eps_hat = predictor.predict(&latent, t, Some(cond))?;
                let z = stochastic.then(|| noise3(&mut rng, (n, h, w)));
                latent = ddim_step(&latent, &eps_hat, t, t_prev, schedule, config.eta, z.as_ref(), clip)?;
                if let Some(p) = pin {
                    overwrite_pins(&mut latent, p, t_prev, schedule, stochastic, &mut rng);
                }
            }
        }
    }
    Ok(latent)
}

/// Reverse-sample one slice from the position-conditioned model at depth
/// fraction p.
pub fn sample_informed_slice(
    model: &mut SliceModel,
    p: f64,
    height: usize,
    width: usize,
    schedule: &Schedule,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Array2<f32>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation("p", format!("position must lie in [0,1], got {p}")));
    }
    let clip = config.clip_denoised.then_some((-1.0f32, 1.0f32));
    let mut rng = rng_from_seed(seed);
    let mut latent = noise3(&mut rng, (1, height, width));
    match config.method {
        Method::Ddpm => {
            for t in (1..=schedule.t_steps()).rev() {
                let eps_hat = model.predict_noise(&latent, &[t], &[p])?;
                let z = (t > 1).then(|| noise3(&mut rng, (1, height, width)));
                latent = ddpm_step(&latent, &eps_hat, t, schedule, z.as_ref(), clip)?;
            }
        }
        Method::Ddim => {
            let path = ddim_time_path(schedule.t_steps(), config.ddim_steps)?;
            for (i, &t) in path.iter().enumerate() {
                let t_prev = path.get(i + 1).copied().unwrap_or(0);
                let eps_hat = model.predict_noise(&latent, &[t], &[p])?;
                let z = (config.eta > 0.0).then(|| noise3(&mut rng, (1, height, width)));
                latent = ddim_step(&latent, &eps_hat, t, t_prev, schedule, config.eta, z.as_ref(), clip)?;
            }
        }
    }
    Ok(latent.index_axis_move(ndarray::Axis(0), 0))
}
