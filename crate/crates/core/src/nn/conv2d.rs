//! 2D convolution, stride 1, odd kernel, same-size zero padding.
//!
//! Forward lowers the input to a column matrix (im2col) and runs one gemm per
//! call, which is where nearly all training time goes; backward reuses the
//! cached column matrix for the weight gradient and scatters the column-space
//! input gradient back with the transposed shifts (col2im).

use ndarray::{s, Array1, Array2, Array4, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

use super::{he_normal, join_path, Layer, Scalar};

#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    cin: usize,
    cout: usize,
    k: usize,
    /// (cout, cin·k·k) — kept flattened, ready for gemm.
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
    h: usize,
    w: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "kernel must be odd, got {k}");
        let mut init = he_normal::<S>(rng, cin * k * k);
        let weight = Array2::from_shape_simple_fn((cout, cin * k * k), &mut init);
        Conv2d {
            cin,
            cout,
            k,
            weight,
            bias: Array1::zeros(cout),
            wgrad: Array2::zeros((cout, cin * k * k)),
            bgrad: Array1::zeros(cout),
            cache: None,
        }
    }

    /// All-zero weights and bias: used where a residual branch must start as
    /// the identity.
    pub fn new_zero(cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel must be odd, got {k}");
        Conv2d {
            cin,
            cout,
            k,
            weight: Array2::zeros((cout, cin * k * k)),
            bias: Array1::zeros(cout),
            wgrad: Array2::zeros((cout, cin * k * k)),
            bgrad: Array1::zeros(cout),
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    /// (b, cin, h, w) → (b, cout, h, w).
    pub fn forward(&mut self, x: &Array4<S>) -> Array4<S> {
        let (b, cin, h, w) = x.dim();
        assert_eq!(cin, self.cin, "channel contract violated");
        let col = im2col(x, self.k);
        let mut out_mat = self.weight.dot(&col);
        for (mut row, bv) in out_mat.outer_iter_mut().zip(self.bias.iter()) {
            row += *bv;
        }
        self.cache = Some(Cache { col, b, h, w });
        mat_to_features(out_mat, b, self.cout, h, w)
    }

    /// (b, cout, h, w) → input gradient, accumulating into wgrad/bgrad.
    pub fn backward(&mut self, gout: &Array4<S>) -> Array4<S> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (b, h, w) = (cache.b, cache.h, cache.w);
        assert_eq!(gout.dim(), (b, self.cout, h, w));
        let gout_mat = features_to_mat(gout);
        self.wgrad = &self.wgrad + &gout_mat.dot(&cache.col.t());
        self.bgrad = &self.bgrad + &gout_mat.sum_axis(ndarray::Axis(1));
        let gcol = self.weight.t().dot(&gout_mat);
        col2im(&gcol, b, self.cin, h, w, self.k)
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
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

/// (b, c, h, w) → (c·k·k, b·h·w) with zero padding k/2; column index is
/// b-major, then y, then x.
fn im2col<S: Scalar>(x: &Array4<S>, k: usize) -> Array2<S> {
    let (b, c, h, w) = x.dim();
    let p = k / 2;
    let mut col = Array2::<S>::zeros((c * k * k, b * h * w));
    {
        let mut colv = col
            .view_mut()
            .into_shape_with_order((c, k, k, b, h, w))
            .expect("freshly allocated, contiguous");
        for ky in 0..k {
            // Output rows y where the shifted input row y+ky-p is in bounds.
            let y0 = p.saturating_sub(ky);
            let y1 = (h + p).saturating_sub(ky).min(h);
            for kx in 0..k {
                let x0 = p.saturating_sub(kx);
                let x1 = (w + p).saturating_sub(kx).min(w);
                if y0 >= y1 || x0 >= x1 {
                    continue;
                }
                for ci in 0..c {
                    for bi in 0..b {
                        colv.slice_mut(s![ci, ky, kx, bi, y0..y1, x0..x1]).assign(
                            &x.slice(s![
                                bi,
                                ci,
                                (y0 + ky - p)..(y1 + ky - p),
                                (x0 + kx - p)..(x1 + kx - p)
                            ]),
                        );
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add column-space gradients back to image
/// space.
fn col2im<S: Scalar>(gcol: &Array2<S>, b: usize, c: usize, h: usize, w: usize, k: usize) -> Array4<S> {
    let p = k / 2;
    let gcolv = gcol
        .view()
        .into_shape_with_order((c, k, k, b, h, w))
        .expect("gemm output is contiguous");
    let mut gin = Array4::<S>::zeros((b, c, h, w));
    for ky in 0..k {
        let y0 = p.saturating_sub(ky);
        let y1 = (h + p).saturating_sub(ky).min(h);
        for kx in 0..k {
            let x0 = p.saturating_sub(kx);
            let x1 = (w + p).saturating_sub(kx).min(w);
            if y0 >= y1 || x0 >= x1 {
                continue;
            }
            for ci in 0..c {
                for bi in 0..b {
                    let mut dst = gin.slice_mut(s![
                        bi,
                        ci,
                        (y0 + ky - p)..(y1 + ky - p),
                        (x0 + kx - p)..(x1 + kx - p)
                    ]);
                    dst += &gcolv.slice(s![ci, ky, kx, bi, y0..y1, x0..x1]);
                }
            }
        }
    }
    gin
}

/// (cout, b·h·w) matrix → (b, cout, h, w) features.
fn mat_to_features<S: Scalar>(mat: Array2<S>, b: usize, c: usize, h: usize, w: usize) -> Array4<S> {
    mat.into_shape_with_order((c, b, h, w))
        .expect("shape bookkeeping")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

/// (b, c, h, w) features → (c, b·h·w) matrix.
fn features_to_mat<S: Scalar>(f: &Array4<S>) -> Array2<S> {
    let (b, c, h, w) = f.dim();
    f.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, b * h * w))
        .expect("shape bookkeeping")
}
