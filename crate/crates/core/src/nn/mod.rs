//! Small neural-net layer zoo with hand-written backprop.
//!
//! Everything is generic over [`Scalar`] so the same layers run in f32 for
//! training and f64 for finite-difference gradient checking. Layers cache
//! whatever their backward pass needs during `forward`, so the call protocol
//! is strictly forward-then-backward on the same instance. Gradients
//! accumulate into per-layer buffers until [`Layer::zero_grads`].
//!
//! Parameters are reached through the [`Layer::visit_params`] visitor; names
//! are dot-joined paths ("enc0.res.conv1.weight"), which is what optimizers
//! key their state on and what stage filtering matches against.

mod conv2d;
mod depthconv;
mod linear;
mod norm;
mod optim;

pub use conv2d::Conv2d;
pub use depthconv::{DepthConv1d, VolumetricResidual};
pub use linear::Linear;
pub use norm::GroupNorm;
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};

use ndarray::{Array, Array2, Array4, ArrayView1, ArrayViewMutD, Dimension, NdFloat, Zip};
use num_traits::FromPrimitive;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type for all layer math: f32 in production, f64 under the
/// gradient checker.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum {
    /// Lossy conversion from a f64 constant.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Anything that owns named parameters with paired gradient buffers.
pub trait Layer<S: Scalar> {
    /// Call `f` once per parameter tensor with (path, value, grad).
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    );

    fn zero_grads(&mut self);
}

/// Dot-join a visitor path segment onto a prefix.
pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total scalar parameter count of a layer tree.
pub fn param_count<S: Scalar>(layer: &mut dyn Layer<S>) -> usize {
    let mut n = 0;
    layer.visit_params("", &mut |_, p, _| n += p.len());
    n
}

/// Gaussian init with He/Kaiming scale for a given fan-in. Sampling happens
/// in f64 so f32 and f64 instantiations of the same seed agree to rounding.
pub fn he_normal<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize) -> impl FnMut() -> S + '_ {
    let std = (2.0 / fan_in as f64).sqrt();
    move || {
        let z: f64 = StandardNormal.sample(rng);
        S::c(z * std)
    }
}

/// x · sigmoid(x), elementwise.
pub fn silu<S: Scalar, D: Dimension>(x: &Array<S, D>) -> Array<S, D> {
    x.mapv(|v| v / (S::one() + (-v).exp()))
}

/// Backward of [`silu`] given the forward *input*.
pub fn silu_backward<S: Scalar, D: Dimension>(x: &Array<S, D>, gout: &Array<S, D>) -> Array<S, D> {
    let mut gin = gout.clone();
    Zip::from(&mut gin).and(x).for_each(|g, &v| {
        let s = S::one() / (S::one() + (-v).exp());
        *g = *g * (s + v * s * (S::one() - s));
    });
    gin
}

/// 2×2 mean pooling. Spatial extents must be even.
pub fn avg_pool2<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (b, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even extents, got {h}x{w}");
    let quarter = S::c(0.25);
    Array4::from_shape_fn((b, c, h / 2, w / 2), |(bi, ci, y, xx)| {
        (x[[bi, ci, 2 * y, 2 * xx]]
            + x[[bi, ci, 2 * y, 2 * xx + 1]]
            + x[[bi, ci, 2 * y + 1, 2 * xx]]
            + x[[bi, ci, 2 * y + 1, 2 * xx + 1]])
            * quarter
    })
}

/// Adjoint of [`avg_pool2`]: spread each output gradient over its 2×2 cell.
pub fn avg_pool2_backward<S: Scalar>(gout: &Array4<S>) -> Array4<S> {
    let (b, c, h2, w2) = gout.dim();
    let quarter = S::c(0.25);
    Array4::from_shape_fn((b, c, h2 * 2, w2 * 2), |(bi, ci, y, xx)| {
        gout[[bi, ci, y / 2, xx / 2]] * quarter
    })
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_nearest2<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, h * 2, w * 2), |(bi, ci, y, xx)| x[[bi, ci, y / 2, xx / 2]])
}

/// Adjoint of [`upsample_nearest2`]: sum each 2×2 cell.
pub fn upsample_nearest2_backward<S: Scalar>(gout: &Array4<S>) -> Array4<S> {
    let (b, c, h2, w2) = gout.dim();
    assert!(h2 % 2 == 0 && w2 % 2 == 0);
    Array4::from_shape_fn((b, c, h2 / 2, w2 / 2), |(bi, ci, y, xx)| {
        gout[[bi, ci, 2 * y, 2 * xx]]
            + gout[[bi, ci, 2 * y, 2 * xx + 1]]
            + gout[[bi, ci, 2 * y + 1, 2 * xx]]
            + gout[[bi, ci, 2 * y + 1, 2 * xx + 1]]
    })
}

/// Transformer-style sinusoidal embedding of a batch of scalars.
///
/// Column 2j holds sin(v / max_period^(2j/dim)), column 2j+1 the matching
/// cos. `dim` must be even. Angles are computed in f64.
pub fn sinusoidal_embedding<S: Scalar>(
    values: ArrayView1<'_, S>,
    dim: usize,
    max_period: f64,
) -> Array2<S> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even, got {dim}");
    let half = dim / 2;
    let mut out = Array2::zeros((values.len(), dim));
    for (i, v) in values.iter().enumerate() {
        let v = v.to_f64().expect("finite value");
        for j in 0..half {
            let freq = max_period.powf(-(j as f64) / half as f64);
            out[[i, 2 * j]] = S::c((v * freq).sin());
            out[[i, 2 * j + 1]] = S::c((v * freq).cos());
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod fd {
    //! Finite-difference scaffolding shared by the per-layer gradient tests.

    use super::*;

    /// Relative error between an analytic and a finite-difference gradient.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        (analytic - numeric).abs() / denom
    }

    /// Check accumulated parameter gradients of `layer` against central
    /// finite differences of `loss`. `loss` must be a pure function of the
    /// current parameters (it may call forward, which overwrites caches).
    /// Covers up to `per_tensor` evenly spaced elements of every tensor.
    pub fn check_param_grads<L: Layer<f64>>(
        layer: &mut L,
        loss: &mut dyn FnMut(&mut L) -> f64,
        per_tensor: usize,
        tol: f64,
    ) {
        // Snapshot names and grads first so we can perturb one param at a
        // time without aliasing the visitor.
        let mut snap: Vec<(String, Vec<f64>)> = Vec::new();
        layer.visit_params("", &mut |name, _, g| {
            snap.push((name.to_string(), g.iter().copied().collect()));
        });
        let h = 1e-5;
        for (tensor_idx, (name, grads)) in snap.iter().enumerate() {
            let stride = (grads.len() / per_tensor).max(1);
            for flat in (0..grads.len()).step_by(stride) {
                let bump = |layer: &mut L, delta: f64| {
                    let mut k = 0;
                    layer.visit_params("", &mut |_, mut p, _| {
                        if k == tensor_idx {
                            let v = p.iter_mut().nth(flat).expect("index in range");
                            *v += delta;
                        }
                        k += 1;
                    });
                };
                bump(layer, h);
                let up = loss(layer);
                bump(layer, -2.0 * h);
                let down = loss(layer);
                bump(layer, h);
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[flat];
                let e = rel_err(analytic, numeric);
                assert!(
                    e < tol,
                    "{name}[{flat}]: analytic {analytic:.3e} vs numeric {numeric:.3e} (rel {e:.3e})"
                );
            }
        }
    }
}
