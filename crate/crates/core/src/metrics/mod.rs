//! Quantitative evaluation: multi-scale structural similarity, tri-axis
//! Fréchet feature distances, per-label Dice overlap, and a through-slice
//! consistency score.

mod features;
mod frechet;
mod ssim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{MaskVolume, Volume};

pub use features::{extract_slice_features, SliceAxis, FEATURE_DIM};
pub use frechet::frechet_distance;
pub use ssim::ms_ssim;

/// One evaluation run's scores. Fréchet distances are reported for axial,
/// coronal, and sagittal slicing; their absolute scale depends on the random
/// projector, so only comparisons within a fixed projector seed are
/// meaningful.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub fid_a: f64,
    pub fid_c: f64,
    pub fid_s: f64,
    pub ms_ssim: f64,
    /// Dyadic scale count the MS-SSIM was computed with.
    pub ms_ssim_scales: usize,
    pub dice_per_label: BTreeMap<u16, f64>,
    pub consistency: f64,
    pub real_volumes: usize,
    pub generated_volumes: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fid_a", self.fid_a),
            ("fid_c", self.fid_c),
            ("fid_s", self.fid_s),
            ("consistency", self.consistency),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(name, format!("need finite >= 0, got {v}")));
            }
        }
        if !self.ms_ssim.is_finite() || !(0.0..=1.0).contains(&self.ms_ssim) {
            return Err(Error::validation(
                "ms_ssim",
                format!("need a value in [0, 1], got {}", self.ms_ssim),
            ));
        }
        for (&label, &d) in &self.dice_per_label {
            if !d.is_finite() || !(0.0..=1.0).contains(&d) {
                return Err(Error::validation(
                    "dice_per_label",
                    format!("label {label}: need a value in [0, 1], got {d}"),
                ));
            }
        }
        Ok(())
    }
}

/// Dice overlap of one label between two equally-shaped masks:
/// 2|A∩B| / (|A| + |B|), defined as 1 when the label is absent from both.
pub fn dice(a: &MaskVolume, b: &MaskVolume, label: u16) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "dice masks",
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    let mut in_a = 0u64;
    let mut in_b = 0u64;
    let mut both = 0u64;
    for (&va, &vb) in a.data().iter().zip(b.data().iter()) {
        let ha = va == label;
        let hb = vb == label;
        in_a += u64::from(ha);
        in_b += u64::from(hb);
        both += u64::from(ha && hb);
    }
    if in_a + in_b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (in_a + in_b) as f64)
}

/// Through-slice consistency: mean |difference between adjacent axial
/// slices| divided by mean |in-slice gradient|. Lower is smoother along the
/// stacking axis. A fully constant volume scores 0; a volume whose slices
/// are flat but mutually different has no in-slice gradient to normalize by
/// and scores infinity.
pub fn volume_consistency(v: &Volume) -> Result<f64> {
    let data = v.data();
    let (z, h, w) = data.dim();
    if z < 2 {
        return Err(Error::validation("volume depth", format!("need >= 2 slices, got {z}")));
    }
    let mut between = 0.0f64;
    for k in 0..z - 1 {
        for y in 0..h {
            for x in 0..w {
                between += f64::from((data[[k + 1, y, x]] - data[[k, y, x]]).abs());
            }
        }
    }
    between /= ((z - 1) * h * w) as f64;

    let mut within = 0.0f64;
    for k in 0..z {
        for y in 0..h {
            for x in 0..w {
                if y + 1 < h {
                    within += f64::from((data[[k, y + 1, x]] - data[[k, y, x]]).abs());
                }
                if x + 1 < w {
                    within += f64::from((data[[k, y, x + 1]] - data[[k, y, x]]).abs());
                }
            }
        }
    }
    within /= (z * ((h - 1) * w + h * (w - 1))) as f64;

    if between == 0.0 {
        return Ok(0.0);
    }
    Ok(between / within)
}
