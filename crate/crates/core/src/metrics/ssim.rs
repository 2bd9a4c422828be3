//! Multi-scale structural similarity over aligned axial slice pairs.
//!
//! Single-scale SSIM uses an 11-tap Gaussian window (σ = 1.5), K1 = 0.01,
//! K2 = 0.03 on a data range of 2 (intensities live in [−1, 1]), with valid
//! (un-padded) filtering. The multi-scale score combines the
//! contrast-structure term across dyadic scales and the luminance term at the
//! coarsest one; negative per-scale means are clamped to zero so fractional
//! exponents stay real.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::phantom::Volume;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DATA_RANGE: f64 = 2.0;

/// Per-scale exponents from the standard five-scale weighting; truncated and
/// renormalized when fewer scales are used.
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// MS-SSIM between two equally-shaped volumes, averaged over aligned axial
/// slice pairs. `scales` dyadic levels are used; the in-plane extent must
/// survive `scales − 1` halvings with at least one full 11-pixel window left.
pub fn ms_ssim(a: &Volume, b: &Volume, scales: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "ms_ssim volumes",
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    if scales == 0 || scales > SCALE_WEIGHTS.len() {
        return Err(Error::validation(
            "scales",
            format!("need 1..={}, got {scales}", SCALE_WEIGHTS.len()),
        ));
    }
    let (h, w, z) = a.dims();
    let coarsest = h.min(w) >> (scales - 1);
    if coarsest < WINDOW {
        return Err(Error::validation(
            "scales",
            format!(
                "{h}x{w} slices shrink below the {WINDOW}-pixel window after {} halvings",
                scales - 1
            ),
        ));
    }
    let mut weights: Vec<f64> = SCALE_WEIGHTS[..scales].to_vec();
    let total: f64 = weights.iter().sum();
    for wv in &mut weights {
        *wv /= total;
    }
    let mut acc = 0.0;
    for k in 0..z {
        acc += ms_ssim_pair(a.slice(k), b.slice(k), &weights);
    }
    Ok(acc / z as f64)
}

fn to_f64(v: ArrayView2<'_, f32>) -> Array2<f64> {
    v.mapv(f64::from)
}

fn ms_ssim_pair(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, weights: &[f64]) -> f64 {
    let mut xa = to_f64(a);
    let mut xb = to_f64(b);
    let mut score = 1.0;
    let last = weights.len() - 1;
    for (si, &wt) in weights.iter().enumerate() {
        let (l_mean, cs_mean) = ssim_means(&xa, &xb);
        let factor = if si == last { (l_mean * cs_mean).max(0.0) } else { cs_mean.max(0.0) };
        score *= factor.powf(wt);
        if si != last {
            xa = halve(&xa);
            xb = halve(&xb);
        }
    }
    score
}

/// Mean luminance term and mean contrast-structure term of the SSIM map.
fn ssim_means(a: &Array2<f64>, b: &Array2<f64>) -> (f64, f64) {
    let c1 = (K1 * DATA_RANGE).powi(2);
    let c2 = (K2 * DATA_RANGE).powi(2);
    let mu_a = gaussian_valid(a);
    let mu_b = gaussian_valid(b);
    let var_a = &gaussian_valid(&(a * a)) - &(&mu_a * &mu_a);
    let var_b = &gaussian_valid(&(b * b)) - &(&mu_b * &mu_b);
    let cov = &gaussian_valid(&(a * b)) - &(&mu_a * &mu_b);
    let mut l_sum = 0.0;
    let mut cs_sum = 0.0;
    let n = mu_a.len() as f64;
    for ((((&ma, &mb), &va), &vb), &c) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(var_a.iter())
        .zip(var_b.iter())
        .zip(cov.iter())
    {
        l_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += (2.0 * c + c2) / (va + vb + c2);
    }
    (l_sum / n, cs_sum / n)
}

/// Separable 11-tap Gaussian filter, valid region only: (h, w) → (h−10, w−10).
fn gaussian_valid(x: &Array2<f64>) -> Array2<f64> {
    let kernel = gaussian_kernel();
    let (h, w) = x.dim();
    let oh = h - (WINDOW - 1);
    let ow = w - (WINDOW - 1);
    // Rows first: (h, w) → (h, ow).
    let mut rows = Array2::zeros((h, ow));
    for y in 0..h {
        for x0 in 0..ow {
            let mut s = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                s += kv * x[[y, x0 + i]];
            }
            rows[[y, x0]] = s;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut s = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                s += kv * rows[[y0 + i, x0]];
            }
            out[[y0, x0]] = s;
        }
    }
    out
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for (i, kv) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *kv = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *kv;
    }
    for kv in &mut k {
        *kv /= sum;
    }
    k
}

/// 2×2 average pooling; a trailing odd row or column is dropped.
fn halve(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for xx in 0..ow {
            out[[y, xx]] = 0.25
                * (x[[2 * y, 2 * xx]]
                    + x[[2 * y, 2 * xx + 1]]
                    + x[[2 * y + 1, 2 * xx]]
                    + x[[2 * y + 1, 2 * xx + 1]]);
        }
    }
    out
}
