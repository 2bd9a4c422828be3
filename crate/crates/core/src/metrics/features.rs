//! Fixed random convolutional features for distribution-level comparison.
//!
//! Slices taken along one anatomical axis are resized to a 32×32 grid and
//! pushed through a three-layer random convolutional network (ReLU between
//! layers, 2× average pooling, global average pool at the end). The weights
//! are drawn once from the projector seed, so the mapping is a fixed random
//! projection: feature distances are meaningful relative to each other, not
//! against any pretrained backbone.

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{avg_pool2, Conv2d};
use crate::phantom::Volume;
use crate::seeds::rng_from_seed;

/// Output feature dimensionality.
pub const FEATURE_DIM: usize = 64;

/// Side length of the grid every slice is resampled to.
const FEATURE_GRID: usize = 32;

/// Slices are batched through the projector in chunks to bound memory.
const CHUNK: usize = 64;

/// Anatomical slicing axis. Volume data is laid out `[z, y, x]`: axial slices
/// fix z, coronal fix y, sagittal fix x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    Axial,
    Coronal,
    Sagittal,
}

impl SliceAxis {
    /// Number of slices a volume yields along this axis.
    pub fn slice_count(self, vol: &Volume) -> usize {
        let (h, w, z) = vol.dims();
        match self {
            SliceAxis::Axial => z,
            SliceAxis::Coronal => h,
            SliceAxis::Sagittal => w,
        }
    }
}

/// Extract one feature row per slice of every volume, ordered volume by
/// volume and slice by slice. Deterministic given `projector_seed`.
pub fn extract_slice_features(
    volumes: &[Volume],
    axis: SliceAxis,
    projector_seed: u64,
) -> Result<Array2<f64>> {
    if volumes.is_empty() {
        return Err(Error::EmptyInput("feature extraction volume set"));
    }
    let mut projector = Projector::new(projector_seed);
    let total: usize = volumes.iter().map(|v| axis.slice_count(v)).sum();
    let mut features = Array2::zeros((total, FEATURE_DIM));
    let mut row = 0;
    let mut batch: Vec<Array2<f32>> = Vec::with_capacity(CHUNK);
    for vol in volumes {
        for k in 0..axis.slice_count(vol) {
            batch.push(resize_bilinear(take_slice(vol, axis, k), FEATURE_GRID, FEATURE_GRID));
            if batch.len() == CHUNK {
                row = projector.flush(&mut batch, &mut features, row);
            }
        }
    }
    projector.flush(&mut batch, &mut features, row);
    Ok(features)
}

fn take_slice(vol: &Volume, axis: SliceAxis, k: usize) -> Array2<f32> {
    let data = vol.data();
    match axis {
        SliceAxis::Axial => data.slice(s![k, .., ..]).to_owned(),
        SliceAxis::Coronal => data.slice(s![.., k, ..]).to_owned(),
        SliceAxis::Sagittal => data.slice(s![.., .., k]).to_owned(),
    }
}

struct Projector {
    c1: Conv2d<f32>,
    c2: Conv2d<f32>,
    c3: Conv2d<f32>,
}

impl Projector {
    fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Projector {
            c1: Conv2d::new(1, 16, 3, &mut rng),
            c2: Conv2d::new(16, 32, 3, &mut rng),
            c3: Conv2d::new(32, FEATURE_DIM, 3, &mut rng),
        }
    }

    /// Run the pending slices through the network, writing one feature row
    /// each starting at `row`; returns the next free row. Clears the batch.
    fn flush(&mut self, batch: &mut Vec<Array2<f32>>, out: &mut Array2<f64>, row: usize) -> usize {
        if batch.is_empty() {
            return row;
        }
        let b = batch.len();
        let mut x = Array4::zeros((b, 1, FEATURE_GRID, FEATURE_GRID));
        for (i, sl) in batch.iter().enumerate() {
            x.slice_mut(s![i, 0, .., ..]).assign(sl);
        }
        batch.clear();
        let mut h = relu(self.c1.forward(&x));
        h = avg_pool2(&h);
        h = relu(self.c2.forward(&h));
        h = avg_pool2(&h);
        h = relu(self.c3.forward(&h));
        // Global average pool: (b, c, h, w) → (b, c).
        let (_, c, ph, pw) = h.dim();
        for bi in 0..b {
            for ci in 0..c {
                let mean = h.slice(s![bi, ci, .., ..]).sum() / (ph * pw) as f32;
                out[[row + bi, ci]] = f64::from(mean);
            }
        }
        row + b
    }
}

fn relu(mut x: Array4<f32>) -> Array4<f32> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Resample to (oh, ow) with bilinear interpolation, corners aligned.
fn resize_bilinear(src: Array2<f32>, oh: usize, ow: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    if (h, w) == (oh, ow) {
        return src;
    }
    let scale = |o: usize, olen: usize, ilen: usize| -> f32 {
        if olen <= 1 {
            0.0
        } else {
            o as f32 * (ilen as f32 - 1.0) / (olen as f32 - 1.0)
        }
    };
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        let fy = scale(y, oh, h);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for x in 0..ow {
            let fx = scale(x, ow, w);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            let top = src[[y0, x0]] * (1.0 - tx) + src[[y0, x1]] * tx;
            let bot = src[[y1, x0]] * (1.0 - tx) + src[[y1, x1]] * tx;
            out[[y, x]] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}
