//! 1D convolution along the depth axis of rearranged (b·h·w, c, n) blocks,
//! plus the residual wrapper used as the pseudo-3D layer.

use ndarray::{s, Array1, Array2, Array3, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

use super::{he_normal, join_path, Layer, Scalar};

/// Channel-mixing 1D convolution, stride 1, odd kernel, zero padding.
#[derive(Debug, Clone)]
pub struct DepthConv1d<S: Scalar> {
    channels: usize,
    k: usize,
    /// (c, c·k), flattened for gemm.
    weight: Array2<S>,
    bias: Array1<S>,
    wgrad: Array2<S>,
    bgrad: Array1<S>,
    cache: Option<Cache<S>>,
}

#[derive(Debug, Clone)]
struct Cache<S> {
    col: Array2<S>,
    b: usize,
    n: usize,
}

impl<S: Scalar> DepthConv1d<S> {
    pub fn new(channels: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "kernel must be odd, got {k}");
        let mut init = he_normal::<S>(rng, channels * k);
        DepthConv1d {
            channels,
            k,
            weight: Array2::from_shape_simple_fn((channels, channels * k), &mut init),
            bias: Array1::zeros(channels),
            wgrad: Array2::zeros((channels, channels * k)),
            bgrad: Array1::zeros(channels),
            cache: None,
        }
    }

    pub fn new_zero(channels: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel must be odd, got {k}");
        DepthConv1d {
            channels,
            k,
            weight: Array2::zeros((channels, channels * k)),
            bias: Array1::zeros(channels),
            wgrad: Array2::zeros((channels, channels * k)),
            bgrad: Array1::zeros(channels),
            cache: None,
        }
    }

    /// (b, c, n) → (b, c, n).
    pub fn forward(&mut self, x: &Array3<S>) -> Array3<S> {
        let (b, c, n) = x.dim();
        assert_eq!(c, self.channels, "channel contract violated");
        let col = im2col1d(x, self.k);
        let mut out_mat = self.weight.dot(&col);
        for (mut row, bv) in out_mat.outer_iter_mut().zip(self.bias.iter()) {
            row += *bv;
        }
        self.cache = Some(Cache { col, b, n });
        out_mat
            .into_shape_with_order((c, b, n))
            .expect("shape bookkeeping")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
    }

    pub fn backward(&mut self, gout: &Array3<S>) -> Array3<S> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (b, n) = (cache.b, cache.n);
        let c = self.channels;
        assert_eq!(gout.dim(), (b, c, n));
        let gout_mat = gout
            .view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, b * n))
            .expect("shape bookkeeping");
        self.wgrad = &self.wgrad + &gout_mat.dot(&cache.col.t());
        self.bgrad = &self.bgrad + &gout_mat.sum_axis(ndarray::Axis(1));
        let gcol = self.weight.t().dot(&gout_mat);
        col2im1d(&gcol, b, c, n, self.k)
    }
}

impl<S: Scalar> Layer<S> for DepthConv1d<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        f(
            &join_path(prefix, "weight"),
            self.weight.view_mut().into_dyn(),
            self.wgrad.view_mut().into_dyn(),
        );
        f(
            &join_path(prefix, "bias"),
            self.bias.view_mut().into_dyn(),
            self.bgrad.view_mut().into_dyn(),
        );
    }

    fn zero_grads(&mut self) {
        self.wgrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }
}

/// (b, c, n) → (c·k, b·n), zero-padded.
fn im2col1d<S: Scalar>(x: &Array3<S>, k: usize) -> Array2<S> {
    let (b, c, n) = x.dim();
    let p = k / 2;
    let mut col = Array2::<S>::zeros((c * k, b * n));
    {
        let mut colv = col
            .view_mut()
            .into_shape_with_order((c, k, b, n))
            .expect("freshly allocated, contiguous");
        for d in 0..k {
            let i0 = p.saturating_sub(d);
            let i1 = (n + p).saturating_sub(d).min(n);
            if i0 >= i1 {
                continue;
            }
            for ci in 0..c {
                for bi in 0..b {
                    colv.slice_mut(s![ci, d, bi, i0..i1])
                        .assign(&x.slice(s![bi, ci, (i0 + d - p)..(i1 + d - p)]));
                }
            }
        }
    }
    col
}

fn col2im1d<S: Scalar>(gcol: &Array2<S>, b: usize, c: usize, n: usize, k: usize) -> Array3<S> {
    let p = k / 2;
    let gcolv = gcol
        .view()
        .into_shape_with_order((c, k, b, n))
        .expect("gemm output is contiguous");
    let mut gin = Array3::<S>::zeros((b, c, n));
    for d in 0..k {
        let i0 = p.saturating_sub(d);
        let i1 = (n + p).saturating_sub(d).min(n);
        if i0 >= i1 {
            continue;
        }
        for ci in 0..c {
            for bi in 0..b {
                let mut dst = gin.slice_mut(s![bi, ci, (i0 + d - p)..(i1 + d - p)]);
                dst += &gcolv.slice(s![ci, d, bi, i0..i1]);
            }
        }
    }
    gin
}

/// y = x + conv1d(x), with the convolution zero-initialized so the layer is
/// the identity until tuned. This is the depth-axis unit inserted between the
/// 2D denoiser stages.
#[derive(Debug, Clone)]
pub struct VolumetricResidual<S: Scalar> {
    conv: DepthConv1d<S>,
}

impl<S: Scalar> VolumetricResidual<S> {
    pub fn new(channels: usize, k: usize) -> Self {
        VolumetricResidual {
            conv: DepthConv1d::new_zero(channels, k),
        }
    }

    pub fn forward(&mut self, x: &Array3<S>) -> Array3<S> {
        let y = self.conv.forward(x);
        x + &y
    }

    pub fn backward(&mut self, gout: &Array3<S>) -> Array3<S> {
        let g = self.conv.backward(gout);
        gout + &g
    }
}

impl<S: Scalar> Layer<S> for VolumetricResidual<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        self.conv.visit_params(&join_path(prefix, "conv"), f);
    }

    fn zero_grads(&mut self) {
        self.conv.zero_grads();
    }
}
