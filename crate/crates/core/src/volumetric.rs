//! Depth-axis rearrangement for pseudo-3D layers.
//!
//! A window of n slices travels through the 2D denoiser as a feature block
//! shaped `(b_v·n, c, h, w)`. To run a layer along the through-slice (depth)
//! axis, the block is rearranged to `(b_v·h·w, c, n)` — every spatial site of
//! every volume becomes one independent depth sequence — the layer is applied,
//! and the result is rearranged back. Spatial positions are never mixed; only
//! the depth axis is.
//!
//! The index map: input element `(v·n + k, ch, y, x)` lands at
//! `((v·h + y)·w + x, ch, k)`.

use ndarray::{Array3, Array4};
use num_traits::Zero;

use crate::error::{Error, Result};

/// `(b_v·n, c, h, w)` → `(b_v·h·w, c, n)`.
pub fn rearrange_to_depth<T: Copy + Zero>(f: &Array4<T>, b_v: usize, n: usize) -> Result<Array3<T>> {
    let (bn, c, h, w) = f.dim();
    if b_v == 0 || n == 0 || bn != b_v * n {
        return Err(Error::shape(
            "rearrange_to_depth",
            format!("first axis {}*{}", b_v, n),
            format!("{bn}"),
        ));
    }
    let mut g = Array3::<T>::zeros((b_v * h * w, c, n));
    for v in 0..b_v {
        for k in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        g[[(v * h + y) * w + x, ch, k]] = f[[v * n + k, ch, y, x]];
                    }
                }
            }
        }
    }
    Ok(g)
}

/// `(b_v·h·w, c, n)` → `(b_v·n, c, h, w)`. Exact inverse of [`rearrange_to_depth`].
pub fn rearrange_from_depth<T: Copy + Zero>(
    g: &Array3<T>,
    b_v: usize,
    n: usize,
    h: usize,
    w: usize,
) -> Result<Array4<T>> {
    let (bhw, c, gn) = g.dim();
    if b_v == 0 || n == 0 || h == 0 || w == 0 || bhw != b_v * h * w || gn != n {
        return Err(Error::shape(
            "rearrange_from_depth",
            format!("({}*{}*{}, c, {})", b_v, h, w, n),
            format!("({bhw}, {c}, {gn})"),
        ));
    }
    let mut f = Array4::<T>::zeros((b_v * n, c, h, w));
    for v in 0..b_v {
        for k in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        f[[v * n + k, ch, y, x]] = g[[(v * h + y) * w + x, ch, k]];
                    }
                }
            }
        }
    }
    Ok(f)
}

/// Run a depth-axis operator on a feature block: rearrange, apply, rearrange
/// back. The operator must preserve the `(·, c, n)` shape.
pub fn apply_volumetric_layer<T: Copy + Zero, F>(f: &Array4<T>, b_v: usize, n: usize, layer: F) -> Result<Array4<T>>
where
    F: FnOnce(&Array3<T>) -> Array3<T>,
{
    let (_, _, h, w) = f.dim();
    let g = rearrange_to_depth(f, b_v, n)?;
    let out = layer(&g);
    if out.dim() != g.dim() {
        return Err(Error::shape(
            "apply_volumetric_layer",
            format!("{:?}", g.dim()),
            format!("{:?}", out.dim()),
        ));
    }
    rearrange_from_depth(&out, b_v, n, h, w)
}
