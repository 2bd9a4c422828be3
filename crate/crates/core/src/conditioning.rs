//! Condition-stack assembly: mask windows plus an informed (style) slice,
//! with provenance tracking and the encoder seam.
//!
//! The denoiser sees its conditions as extra input channels. A window of n
//! mask slices is encoded per slice; the informed slice is encoded once and
//! repeated across the window so every slice of the window receives the same
//! appearance cue.

use std::fmt;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{read_volume, DatasetManifest, Volume};

/// Slice encoder seam. Identity at this scale; a learned autoencoder would
/// slot in here without touching the samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    #[default]
    Identity,
}

impl Encoder {
    pub fn channels(&self) -> usize {
        match self {
            Encoder::Identity => 1,
        }
    }

    /// (h, w) intensity slice → (c, h, w) feature channels.
    pub fn encode(&self, slice: ArrayView2<'_, f32>) -> Array3<f32> {
        match self {
            Encoder::Identity => slice.to_owned().insert_axis(Axis(0)),
        }
    }

    /// Exact inverse of [`Encoder::encode`] for the identity kind.
    pub fn decode(&self, channels: ArrayView3<'_, f32>) -> Array2<f32> {
        match self {
            Encoder::Identity => channels.index_axis(Axis(0), 0).to_owned(),
        }
    }
}

/// How mask labels become condition channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskEncoding {
    /// One channel, label L mapped to −1 + 2L/num_labels.
    Normalized { num_labels: u16 },
    /// num_labels+1 indicator channels.
    OneHot { num_labels: u16 },
}

impl MaskEncoding {
    pub fn num_labels(&self) -> u16 {
        match self {
            MaskEncoding::Normalized { num_labels } | MaskEncoding::OneHot { num_labels } => *num_labels,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            MaskEncoding::Normalized { .. } => 1,
            MaskEncoding::OneHot { num_labels } => *num_labels as usize + 1,
        }
    }

    /// (h, w) label slice → (c, h, w) channels.
    pub fn encode_slice(&self, mask: ArrayView2<'_, u16>) -> Result<Array3<f32>> {
        let l_max = self.num_labels();
        if let Some(&bad) = mask.iter().find(|&&l| l > l_max) {
            return Err(Error::validation(
                "mask",
                format!("label {bad} exceeds configured maximum {l_max}"),
            ));
        }
        let (h, w) = mask.dim();
        Ok(match self {
            MaskEncoding::Normalized { num_labels } => {
                let scale = 2.0 / *num_labels as f32;
                let mut out = Array3::zeros((1, h, w));
                for ((y, x), &l) in mask.indexed_iter() {
                    out[[0, y, x]] = -1.0 + scale * l as f32;
                }
                out
            }
            MaskEncoding::OneHot { num_labels } => {
                let mut out = Array3::zeros((*num_labels as usize + 1, h, w));
                for ((y, x), &l) in mask.indexed_iter() {
                    out[[l as usize, y, x]] = 1.0;
                }
                out
            }
        })
    }
}

/// Where an informed slice came from. Carried through sampling so every
/// synthetic volume can answer "whose appearance prior drove this".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum InformedProvenance {
    /// A real slice: dataset entry id plus slice index.
    Volume { id: String, index: usize },
    /// Drawn from the position-conditioned slice model at position p.
    Generated { p: f64 },
    /// Supplied by the user as a file.
    File { path: String },
    /// Recursive: a slice generated by an earlier window of the same
    /// assembly run, identified by its global slice index.
    Recursive { index: usize },
}

impl fmt::Display for InformedProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InformedProvenance::Volume { id, index } => write!(f, "{id}[{index}]"),
            InformedProvenance::Generated { p } => write!(f, "generated(p={p:.3})"),
            InformedProvenance::File { path } => write!(f, "file({path})"),
            InformedProvenance::Recursive { index } => write!(f, "recursive[{index}]"),
        }
    }
}

/// The condition input for one window: encoded mask slices plus the encoded
/// informed slice repeated across the window.
#[derive(Debug, Clone)]
pub struct ConditionStack {
    /// (n, c_m, h, w).
    pub mask_channels: Array4<f32>,
    /// (n, c_i, h, w); all n entries identical.
    pub informed_channels: Array4<f32>,
    pub provenance: InformedProvenance,
}

impl ConditionStack {
    pub fn window_len(&self) -> usize {
        self.mask_channels.dim().0
    }

    pub fn cond_channels(&self) -> usize {
        self.mask_channels.dim().1 + self.informed_channels.dim().1
    }
}

/// Encode a mask window and informed slice into a [`ConditionStack`].
pub fn build_condition_stack(
    mask_window: ArrayView3<'_, u16>,
    informed: ArrayView2<'_, f32>,
    encoding: &MaskEncoding,
    encoder: &Encoder,
    provenance: InformedProvenance,
) -> Result<ConditionStack> {
    let (n, h, w) = mask_window.dim();
    if n == 0 {
        return Err(Error::EmptyInput("mask window"));
    }
    if informed.dim() != (h, w) {
        return Err(Error::shape(
            "informed slice",
            format!("{h}x{w}"),
            format!("{}x{}", informed.dim().0, informed.dim().1),
        ));
    }
    let mut mask_channels = Array4::zeros((n, encoding.channels(), h, w));
    for (k, slice) in mask_window.outer_iter().enumerate() {
        mask_channels
            .index_axis_mut(Axis(0), k)
            .assign(&encoding.encode_slice(slice)?);
    }
    let enc = encoder.encode(informed);
    let mut informed_channels = Array4::zeros((n, encoder.channels(), h, w));
    for k in 0..n {
        informed_channels.index_axis_mut(Axis(0), k).assign(&enc);
    }
    Ok(ConditionStack {
        mask_channels,
        informed_channels,
        provenance,
    })
}

/// IC policy: a uniformly random slice of a uniformly random dataset entry.
pub fn select_informed_ic(
    manifest: &DatasetManifest,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f32>, InformedProvenance)> {
    if manifest.entries.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    let e = &manifest.entries[rng.random_range(0..manifest.entries.len())];
    let vol = read_volume(manifest.volume_path(e))?;
    let index = rng.random_range(0..vol.depth());
    Ok((
        vol.slice(index).to_owned(),
        InformedProvenance::Volume { id: e.id.clone(), index },
    ))
}

/// Training-time policy: a uniformly random slice inside the window
/// [j, j+n) of the window's own volume.
pub fn select_informed_self(
    volume: &Volume,
    j: usize,
    n: usize,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> (Array2<f32>, InformedProvenance) {
    let index = j + rng.random_range(0..n);
    (
        volume.slice(index).to_owned(),
        InformedProvenance::Volume { id: id.to_string(), index },
    )
}
