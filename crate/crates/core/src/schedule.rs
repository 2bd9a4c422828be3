//! Diffusion noise schedule and closed-form forward corruption.
//!
//! The schedule holds the β_t / α_t / ᾱ_t tables (1-based step indices,
//! t = 1..=T) plus reverse-step noise scales σ_t. Tables are computed once in
//! f64 and immutable afterwards, so a `Schedule` can be shared freely across
//! threads.

use ndarray::{Array, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which reverse-step noise scale σ_t to use for ancestral (DDPM) sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// σ_t = √β_t.
    #[default]
    SqrtBeta,
    /// σ_t = √β̃_t with β̃_t = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t (posterior variance).
    /// Yields σ_1 = 0.
    Posterior,
}

/// Serialized form of a schedule: the constructor arguments, not the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub kind: String,
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
    /// beta[t-1] = β_t, likewise for the other tables.
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    sigma_kind: SigmaKind,
}

impl Schedule {
    /// Linear β interpolation inclusive of both endpoints, σ_t = √β_t.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::validation("T", format!("need T >= 2, got {t_steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::validation(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            ));
        }
        let beta: Vec<f64> = (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        // ᾱ strictly decreasing follows from β_t > 0; assert to catch
        // degenerate float underflow at absurd T.
        debug_assert!(alpha_bar.windows(2).all(|w| w[1] < w[0]));
        let mut s = Schedule {
            t_steps,
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            sigma: Vec::new(),
            sigma_kind: SigmaKind::SqrtBeta,
        };
        s.rebuild_sigma();
        Ok(s)
    }

    /// Same schedule with a different σ_t convention.
    pub fn with_sigma_kind(mut self, kind: SigmaKind) -> Self {
        self.sigma_kind = kind;
        self.rebuild_sigma();
        self
    }

    fn rebuild_sigma(&mut self) {
        self.sigma = match self.sigma_kind {
            SigmaKind::SqrtBeta => self.beta.iter().map(|b| b.sqrt()).collect(),
            SigmaKind::Posterior => (1..=self.t_steps)
                .map(|t| {
                    let ab_prev = self.alpha_bar_or_one(t - 1);
                    let ab = self.alpha_bar[t - 1];
                    ((1.0 - ab_prev) / (1.0 - ab) * self.beta[t - 1]).sqrt()
                })
                .collect(),
        };
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn sigma_kind(&self) -> SigmaKind {
        self.sigma_kind
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// α_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t for t in 1..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// ᾱ_t extended with the convention ᾱ_0 = 1 (used by reverse steps and
    /// boundary re-noising, where the t=0 endpoint must be exact).
    pub fn alpha_bar_or_one(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// σ_t for t in 1..=T.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    /// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps, elementwise.
    pub fn forward_diffuse<D: Dimension>(
        &self,
        x0: &Array<f32, D>,
        t: usize,
        eps: &Array<f32, D>,
    ) -> Result<Array<f32, D>> {
        if t < 1 || t > self.t_steps {
            return Err(Error::validation("t", format!("step {t} outside 1..={}", self.t_steps)));
        }
        if x0.shape() != eps.shape() {
            return Err(Error::shape(
                "forward_diffuse",
                format!("{:?}", x0.shape()),
                format!("{:?}", eps.shape()),
            ));
        }
        let ab = self.alpha_bar(t);
        let a = ab.sqrt() as f32;
        let b = (1.0 - ab).sqrt() as f32;
        Ok(x0 * a + eps * b)
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            kind: "linear".to_string(),
            t_steps: self.t_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn from_params(p: &ScheduleParams) -> Result<Self> {
        if p.kind != "linear" {
            return Err(Error::validation("kind", format!("unknown schedule kind {:?}", p.kind)));
        }
        Schedule::linear(p.t_steps, p.beta_start, p.beta_end)
    }
}

/// The crate-default schedule: linear β over 1000 steps, β ∈ [1e-4, 2e-2].
pub fn default_schedule() -> Schedule {
    Schedule::linear(1000, 1e-4, 2e-2).expect("default schedule params are valid")
}
