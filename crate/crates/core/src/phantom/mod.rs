//! Procedural 3D phantoms: paired (image, mask) volumes with per-patient
//! style, plus the on-disk container format and dataset manifest.
//!
//! A phantom is a body ellipsoid containing organ ellipsoids and (optionally)
//! a lesion, rendered as per-label base intensities modulated by a
//! [`PatientStyle`]: a global intensity gain, a low-frequency trilinear bias
//! field, and a texture-noise seed. The gain is the style axis that an
//! informed slice carries — mean body intensity tracks it monotonically.

mod gen;
mod io;
mod manifest;

pub use gen::{
    generate_phantom, generate_phantom_styled, mean_body_intensity, recover_labels, sample_style,
};
pub use io::{read_mask, read_volume, write_mask, write_volume};
pub use manifest::{
    generate_dataset, split_dataset, DatasetManifest, ManifestEntry, Split,
};

use ndarray::{Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generation parameters for a phantom corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// In-plane height (y extent), voxels.
    pub height: usize,
    /// In-plane width (x extent), voxels.
    pub width: usize,
    /// Z_i is sampled uniformly from this inclusive range.
    pub depth_range: [usize; 2],
    /// Number of organ ellipsoids inside the body.
    pub organ_count: usize,
    /// Probability that a phantom carries a lesion label.
    pub lesion_probability: f64,
    /// Texture-noise amplitude on the [−1, 1] intensity scale.
    pub noise_amplitude: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            height: 32,
            width: 32,
            depth_range: [24, 48],
            organ_count: 3,
            lesion_probability: 0.5,
            noise_amplitude: 0.02,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 {
            return Err(Error::validation("height", format!("need >= 8, got {}", self.height)));
        }
        if self.width < 8 {
            return Err(Error::validation("width", format!("need >= 8, got {}", self.width)));
        }
        if self.depth_range[0] < 2 || self.depth_range[0] > self.depth_range[1] {
            return Err(Error::validation(
                "depth_range",
                format!("need 2 <= min <= max, got {:?}", self.depth_range),
            ));
        }
        if self.organ_count < 1 {
            return Err(Error::validation("organ_count", "need >= 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(Error::validation(
                "lesion_probability",
                format!("need within [0,1], got {}", self.lesion_probability),
            ));
        }
        if !self.noise_amplitude.is_finite() || self.noise_amplitude < 0.0 {
            return Err(Error::validation(
                "noise_amplitude",
                format!("need finite >= 0, got {}", self.noise_amplitude),
            ));
        }
        Ok(())
    }

    /// Label of organ `j` (0-based): organs occupy 2..=organ_count+1.
    pub fn organ_label(&self, j: usize) -> u16 {
        (2 + j) as u16
    }

    /// The lesion label, one past the last organ.
    pub fn lesion_label(&self) -> u16 {
        (2 + self.organ_count) as u16
    }
}

/// Per-patient appearance latent. Gain scales every in-body intensity, the
/// bias field adds a low-frequency trilinear drift, the texture seed fixes the
/// band-limited noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientStyle {
    pub gain: f32,
    /// Coefficients of the u, v, w, uv, uw, vw trilinear basis terms in
    /// normalized coordinates u,v,w ∈ [−1,1] (constant and uvw terms omitted).
    pub bias: [f32; 6],
    pub texture_seed: u64,
}

impl PatientStyle {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.5).contains(&self.gain) {
            return Err(Error::validation("gain", format!("need within [0.5, 1.5], got {}", self.gain)));
        }
        let mag: f32 = self.bias.iter().map(|c| c.abs()).sum();
        if mag > 0.3 {
            return Err(Error::validation(
                "bias",
                format!("field magnitude {mag} exceeds 0.3 of the intensity range"),
            ));
        }
        Ok(())
    }

    /// Bias field value at normalized coordinates (u, v, w) ∈ [−1, 1]³.
    pub fn bias_at(&self, u: f32, v: f32, w: f32) -> f32 {
        let c = &self.bias;
        c[0] * u + c[1] * v + c[2] * w + c[3] * u * v + c[4] * u * w + c[5] * v * w
    }
}

/// A 3D intensity image. Stored as `[z, y, x]` so the x axis is contiguous,
/// matching the file format's x-fastest voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
}

impl Volume {
    /// Wrap an array, enforcing the finite-and-in-range invariant.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::validation("dims", format!("zero extent in {:?}", data.shape())));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::validation("voxels", format!("value {v} outside [-1, 1]")));
            }
        }
        Ok(Volume { data })
    }

    /// (H, W, Z).
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[0])
    }

    pub fn depth(&self) -> usize {
        self.data.shape()[0]
    }

    /// Axial slice at index `k`, viewed as (y, x).
    pub fn slice(&self, k: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), k)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }
}

/// Integer label volume paired with a [`Volume`]. Same axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    data: Array3<u16>,
}

impl MaskVolume {
    pub fn new(data: Array3<u16>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::validation("dims", format!("zero extent in {:?}", data.shape())));
        }
        Ok(MaskVolume { data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[0])
    }

    pub fn depth(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn slice(&self, k: usize) -> ArrayView2<'_, u16> {
        self.data.index_axis(ndarray::Axis(0), k)
    }

    pub fn data(&self) -> &Array3<u16> {
        &self.data
    }

    pub fn into_data(self) -> Array3<u16> {
        self.data
    }

    /// Largest label present.
    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Background intensity: flat, no style applied outside the body.
pub const BACKGROUND: f32 = -1.0;

/// Base (pre-style) intensity for a label. Organs are evenly spaced between
/// the body base and the lesion base so every label is separable by an
/// intensity band.
pub fn label_base_intensity(label: u16, organ_count: usize) -> f32 {
    match label {
        0 => BACKGROUND,
        1 => 0.1,
        l if (l as usize) <= 1 + organ_count => {
            0.1 + 0.6 * (l as f32 - 1.0) / (organ_count as f32 + 1.0)
        }
        _ => 0.7,
    }
}
