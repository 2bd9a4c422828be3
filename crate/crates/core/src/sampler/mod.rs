//! Reverse diffusion sampling: single steps (DDPM/DDIM), pinned window
//! sampling with overlap inpainting, window planning, informed-slice
//! generation, and full volume assembly.

mod assemble;
mod plan;
mod window;

pub use assemble::{assemble_volume, AssemblyJobRecord};
pub use plan::{window_plan, Direction, PlanJob, WindowPlan};
pub use window::{sample_informed_slice, sample_window, PinSpec};

use ndarray::{Array3, Dimension};
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionStack;
use crate::error::{Error, Result};
use crate::model::DenoiserModel;
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ddpm,
    #[default]
    Ddim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub method: Method,
    /// Number of DDIM timesteps (ignored for DDPM, which always walks all T).
    pub ddim_steps: usize,
    pub eta: f64,
    /// Window length n in slices.
    pub window_length: usize,
    /// Overlap h between consecutive windows.
    pub overlap: usize,
    /// When false, pins are ignored and every window samples freely
    /// (ablation mode).
    pub overlapped_inpainting: bool,
    /// Clamp the denoised estimate to the data range [−1, 1] at every
    /// reverse step. Keeps coarse trajectories from amplifying prediction
    /// error through the 1/√ᾱ factor at high t; turn off for targets that
    /// are not image-ranged (e.g. closed-form Gaussian checks).
    #[serde(default = "default_clip_denoised")]
    pub clip_denoised: bool,
    pub seed: u64,
}

fn default_clip_denoised() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: Method::Ddim,
            ddim_steps: 50,
            eta: 0.0,
            window_length: 8,
            overlap: 1,
            overlapped_inpainting: true,
            clip_denoised: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.overlap < 1 || self.overlap >= self.window_length {
            return Err(Error::validation(
                "overlap",
                format!("need 1 <= h < n, got h={}, n={}", self.overlap, self.window_length),
            ));
        }
        if self.ddim_steps < 1 {
            return Err(Error::validation("ddim_steps", "must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::validation("eta", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Noise prediction seam: the trained denoiser in production, closed-form
/// oracles in tests. `cond` is None for unconditional predictors.
pub trait NoisePredictor {
    fn predict(
        &mut self,
        w_t: &Array3<f32>,
        t: usize,
        cond: Option<&ConditionStack>,
    ) -> Result<Array3<f32>>;
}

/// Adapter running the trained window denoiser, with or without the
/// depth-axis layers (the latter is the no-volumetric ablation).
pub struct DenoiserSampler<'a> {
    pub model: &'a mut DenoiserModel,
    pub volumetric: bool,
}

impl NoisePredictor for DenoiserSampler<'_> {
    fn predict(
        &mut self,
        w_t: &Array3<f32>,
        t: usize,
        cond: Option<&ConditionStack>,
    ) -> Result<Array3<f32>> {
        let cond = cond.ok_or_else(|| Error::validation("cond", "window denoiser needs a condition stack"))?;
        self.model.predict_noise(w_t, cond, t, self.volumetric)
    }
}

/// Closed-form optimal denoiser for targets drawn i.i.d. from
/// Normal(mu, sigma²): the analytic yardstick for end-to-end sampler tests.
/// For x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε the posterior mean of ε is
/// √(1−ᾱ_t)·(x_t − √ᾱ_t·μ) / (ᾱ_t·σ² + 1 − ᾱ_t).
pub struct GaussianOracle<'a> {
    pub mu: f32,
    pub sigma: f32,
    pub schedule: &'a Schedule,
}

impl NoisePredictor for GaussianOracle<'_> {
    fn predict(&mut self, w_t: &Array3<f32>, t: usize, _cond: Option<&ConditionStack>) -> Result<Array3<f32>> {
        let ab = self.schedule.alpha_bar(t) as f32;
        let scale = (1.0 - ab).sqrt() / (ab * self.sigma * self.sigma + 1.0 - ab);
        Ok(w_t.mapv(|v| scale * (v - ab.sqrt() * self.mu)))
    }
}

/// One DDPM reverse step with explicit coefficients:
/// w_{t−1} = (w_t − ((1−α)/√(1−ᾱ))·ε̂)/√α + σ·z.
pub fn ddpm_step_coeffs<D: Dimension>(
    w_t: &ndarray::Array<f32, D>,
    eps_hat: &ndarray::Array<f32, D>,
    alpha: f64,
    alpha_bar: f64,
    sigma: f64,
    z: Option<&ndarray::Array<f32, D>>,
) -> Result<ndarray::Array<f32, D>> {
    if eps_hat.raw_dim() != w_t.raw_dim() {
        return Err(Error::shape("ddpm step", format!("{:?}", w_t.shape()), format!("{:?}", eps_hat.shape())));
    }
    let c_eps = ((1.0 - alpha) / (1.0 - alpha_bar).sqrt()) as f32;
    let c_w = (1.0 / alpha.sqrt()) as f32;
    let mut out = ndarray::Zip::from(w_t)
        .and(eps_hat)
        .map_collect(|&w, &e| c_w * (w - c_eps * e));
    if let Some(z) = z {
        if z.raw_dim() != w_t.raw_dim() {
            return Err(Error::shape("ddpm noise", format!("{:?}", w_t.shape()), format!("{:?}", z.shape())));
        }
        let s = sigma as f32;
        ndarray::Zip::from(&mut out).and(z).for_each(|o, &zv| *o += s * zv);
    }
    Ok(out)
}

/// One DDPM reverse step at schedule timestep t. The stochastic term is
/// forced to zero at t = 1 regardless of `z`. With `clip`, the x0 estimate
/// is clamped to that range and the step uses the posterior-mean form
/// μ̃ = (√ᾱ_{t−1}·β_t·x0 + √α_t·(1−ᾱ_{t−1})·w_t)/(1−ᾱ_t); without it, the
/// direct ε̂ form — algebraically the same map when no clamping binds.
pub fn ddpm_step<D: Dimension>(
    w_t: &ndarray::Array<f32, D>,
    eps_hat: &ndarray::Array<f32, D>,
    t: usize,
    schedule: &Schedule,
    z: Option<&ndarray::Array<f32, D>>,
    clip: Option<(f32, f32)>,
) -> Result<ndarray::Array<f32, D>> {
    let z = if t == 1 { None } else { z };
    let Some((lo, hi)) = clip else {
        return ddpm_step_coeffs(
            w_t,
            eps_hat,
            schedule.alpha(t),
            schedule.alpha_bar(t),
            schedule.sigma(t),
            z,
        );
    };
    if eps_hat.raw_dim() != w_t.raw_dim() {
        return Err(Error::shape("ddpm step", format!("{:?}", w_t.shape()), format!("{:?}", eps_hat.shape())));
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar_or_one(t - 1);
    let c0 = (1.0 / ab_t.sqrt()) as f32;
    let c1 = (1.0 - ab_t).sqrt() as f32;
    let w_x0 = (ab_prev.sqrt() * schedule.beta(t) / (1.0 - ab_t)) as f32;
    let w_wt = (schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t)) as f32;
    let mut out = ndarray::Zip::from(w_t).and(eps_hat).map_collect(|&w, &e| {
        let x0 = (c0 * (w - c1 * e)).clamp(lo, hi);
        w_x0 * x0 + w_wt * w
    });
    if let Some(z) = z {
        if z.raw_dim() != w_t.raw_dim() {
            return Err(Error::shape("ddpm noise", format!("{:?}", w_t.shape()), format!("{:?}", z.shape())));
        }
        let s = schedule.sigma(t) as f32;
        ndarray::Zip::from(&mut out).and(z).for_each(|o, &zv| *o += s * zv);
    }
    Ok(out)
}

/// One DDIM step from timestep t to t_prev (t_prev may be 0, meaning fully
/// denoised). With eta = 0 the step is deterministic. `clip` clamps the x0
/// estimate to the given range before the step reprojects it.
pub fn ddim_step<D: Dimension>(
    w_t: &ndarray::Array<f32, D>,
    eps_hat: &ndarray::Array<f32, D>,
    t: usize,
    t_prev: usize,
    schedule: &Schedule,
    eta: f64,
    z: Option<&ndarray::Array<f32, D>>,
    clip: Option<(f32, f32)>,
) -> Result<ndarray::Array<f32, D>> {
    if t_prev >= t {
        return Err(Error::validation("t_prev", format!("must be below t: {t_prev} >= {t}")));
    }
    if eps_hat.raw_dim() != w_t.raw_dim() {
        return Err(Error::shape("ddim step", format!("{:?}", w_t.shape()), format!("{:?}", eps_hat.shape())));
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar_or_one(t_prev);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt();
    let c0 = (1.0 / ab_t.sqrt()) as f32;
    let c1 = (1.0 - ab_t).sqrt() as f32;
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt() as f32;
    let root_prev = ab_prev.sqrt() as f32;
    let mut out = ndarray::Zip::from(w_t).and(eps_hat).map_collect(|&w, &e| {
        let mut x0 = c0 * (w - c1 * e);
        if let Some((lo, hi)) = clip {
            x0 = x0.clamp(lo, hi);
        }
        root_prev * x0 + dir * e
    });
    if sigma > 0.0 {
        let z = z.ok_or_else(|| Error::validation("z", "eta > 0 needs a noise draw"))?;
        if z.raw_dim() != w_t.raw_dim() {
            return Err(Error::shape("ddim noise", format!("{:?}", w_t.shape()), format!("{:?}", z.shape())));
        }
        let s = sigma as f32;
        ndarray::Zip::from(&mut out).and(z).for_each(|o, &zv| *o += s * zv);
    }
    Ok(out)
}

/// Descending DDIM timestep subsequence of [1, T], always containing T and
/// 1 (for steps ≥ 2). Consecutive entries form the (t, t_prev) pairs; the
/// final step runs t = 1 → 0.
pub fn ddim_time_path(t_steps: usize, ddim_steps: usize) -> Result<Vec<usize>> {
    if ddim_steps < 1 {
        return Err(Error::validation("ddim_steps", "must be at least 1"));
    }
    if ddim_steps > t_steps {
        return Err(Error::validation(
            "ddim_steps",
            format!("cannot exceed schedule length: {ddim_steps} > {t_steps}"),
        ));
    }
    if ddim_steps == 1 {
        return Ok(vec![t_steps]);
    }
    let mut path: Vec<usize> = (0..ddim_steps)
        .map(|i| {
            let f = i as f64 / (ddim_steps - 1) as f64;
            1 + (f * (t_steps - 1) as f64).round() as usize
        })
        .collect();
    path.dedup();
    path.reverse();
    Ok(path)
}
