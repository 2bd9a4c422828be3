//! Group normalization over (b, c, h, w) features.

use ndarray::{Array1, Array4, ArrayViewMutD, Axis};

use super::{join_path, Layer, Scalar};

#[derive(Debug, Clone)]
pub struct GroupNorm<S: Scalar> {
    groups: usize,
    channels: usize,
    eps: S,
    gamma: Array1<S>,
    beta: Array1<S>,
    ggrad: Array1<S>,
    bgrad: Array1<S>,
    cache: Option<Cache<S>>,
}

#[derive(Debug, Clone)]
struct Cache<S> {
    xhat: Array4<S>,
    /// 1/√(var+eps) per (sample, group).
    inv_std: ndarray::Array2<S>,
}

impl<S: Scalar> GroupNorm<S> {
    pub fn new(groups: usize, channels: usize) -> Self {
        assert!(groups >= 1 && channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        GroupNorm {
            groups,
            channels,
            eps: S::c(1e-5),
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            ggrad: Array1::zeros(channels),
            bgrad: Array1::zeros(channels),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&mut self, x: &Array4<S>) -> Array4<S> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "channel contract violated");
        let cg = c / self.groups;
        let m = S::c((cg * h * w) as f64);
        let mut xhat = x.clone();
        let mut inv_std = ndarray::Array2::zeros((b, self.groups));
        for bi in 0..b {
            for g in 0..self.groups {
                let mut block = xhat.slice_mut(ndarray::s![bi, g * cg..(g + 1) * cg, .., ..]);
                let mean = block.sum() / m;
                block.mapv_inplace(|v| v - mean);
                let var = block.iter().map(|v| *v * *v).sum::<S>() / m;
                let istd = S::one() / (var + self.eps).sqrt();
                block.mapv_inplace(|v| v * istd);
                inv_std[[bi, g]] = istd;
            }
        }
        let mut out = xhat.clone();
        for ci in 0..c {
            let mut ch = out.slice_mut(ndarray::s![.., ci, .., ..]);
            ch.mapv_inplace(|v| v * self.gamma[ci] + self.beta[ci]);
        }
        self.cache = Some(Cache { xhat, inv_std });
        out
    }

    pub fn backward(&mut self, gout: &Array4<S>) -> Array4<S> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (b, c, h, w) = gout.dim();
        let cg = c / self.groups;
        let m = S::c((cg * h * w) as f64);

        // Per-channel parameter grads.
        for ci in 0..c {
            let go = gout.index_axis(Axis(1), ci);
            let xh = cache.xhat.index_axis(Axis(1), ci);
            self.ggrad[ci] = self.ggrad[ci] + (&go * &xh).sum();
            self.bgrad[ci] = self.bgrad[ci] + go.sum();
        }

        // Input grad, fused per (sample, group):
        // dx = istd/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat⊙xhat))
        let mut gin = Array4::zeros(gout.dim());
        for bi in 0..b {
            for g in 0..self.groups {
                let sl = ndarray::s![bi, g * cg..(g + 1) * cg, .., ..];
                let xh = cache.xhat.slice(sl);
                let go = gout.slice(sl);
                // dxhat = gout ⊙ gamma (broadcast per channel)
                let mut dxh = go.to_owned();
                for (ci_local, mut ch) in dxh.outer_iter_mut().enumerate() {
                    let gamma = self.gamma[g * cg + ci_local];
                    ch.mapv_inplace(|v| v * gamma);
                }
                let sum_dxh = dxh.sum();
                let sum_dxh_xh = (&dxh * &xh).sum();
                let istd = cache.inv_std[[bi, g]];
                let mut dst = gin.slice_mut(sl);
                ndarray::Zip::from(&mut dst)
                    .and(&dxh)
                    .and(&xh)
                    .for_each(|d, &dx, &x| {
                        *d = istd / m * (m * dx - sum_dxh - x * sum_dxh_xh);
                    });
            }
        }
        gin
    }
}

impl<S: Scalar> Layer<S> for GroupNorm<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        f(
            &join_path(prefix, "gamma"),
            self.gamma.view_mut().into_dyn(),
            self.ggrad.view_mut().into_dyn(),
        );
        f(
            &join_path(prefix, "beta"),
            self.beta.view_mut().into_dyn(),
            self.bgrad.view_mut().into_dyn(),
        );
    }

    fn zero_grads(&mut self) {
        self.ggrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }
}
