//! The denoiser body: a two-stage encoder–decoder with skip connection,
//! sinusoidal time embedding, optional additive position embedding, and
//! identity-initialized depth-axis residual layers between stages.
//!
//! Forward topology (spatial extents for a 32×32 input):
//!
//! ```text
//! x ─ stem ─ enc0 ─[vol0]─┬─ pool ─ down ─[vol1]─ mid ─ up ─┐
//!                         └────────────── skip ───────── concat ─ dec ─[vol2]
//!                                                     ─ gn ─ silu ─ out conv
//! ```
//!
//! Every block caches what its backward needs, so the protocol is one
//! `forward` followed by at most one `backward` on the same instance.

use ndarray::{s, Array1, Array2, Array4, ArrayViewMutD, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, join_path, silu, silu_backward, sinusoidal_embedding,
    upsample_nearest2, upsample_nearest2_backward, Conv2d, GroupNorm, Layer, Linear, Scalar,
    VolumetricResidual,
};
use crate::volumetric::{rearrange_from_depth, rearrange_to_depth};

/// Position values are embedded on the same angular scale as timesteps by
/// stretching [0,1] over this range.
const POSITION_SCALE: f64 = 1000.0;
const EMBED_MAX_PERIOD: f64 = 10_000.0;

/// Architecture hyperparameters. Everything needed to rebuild the parameter
/// tree shape-for-shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    /// Full input width: target channels plus condition channels.
    pub in_channels: usize,
    pub target_channels: usize,
    pub base_channels: usize,
    /// Time/position embedding width; even.
    pub emb_dim: usize,
    /// Whether the model accepts a normalized position id per sample.
    pub position_conditioned: bool,
    /// Whether depth-axis residual layers are constructed.
    pub volumetric: bool,
}

impl Descriptor {
    pub fn validate(&self) -> Result<()> {
        if self.target_channels == 0 || self.in_channels < self.target_channels {
            return Err(Error::validation(
                "channels",
                format!("need in >= target >= 1, got in={} target={}", self.in_channels, self.target_channels),
            ));
        }
        if self.base_channels < 2 {
            return Err(Error::validation("base_channels", "need >= 2".to_string()));
        }
        if self.emb_dim < 4 || self.emb_dim % 2 != 0 {
            return Err(Error::validation("emb_dim", format!("need even >= 4, got {}", self.emb_dim)));
        }
        Ok(())
    }

    pub fn cond_channels(&self) -> usize {
        self.in_channels - self.target_channels
    }
}

/// Largest of {8,4,2,1} that divides `c` while keeping at least two
/// channels per group; 1 otherwise. Single-channel groups would normalize
/// away any per-channel conditioning signal.
fn norm_groups(c: usize) -> usize {
    [8usize, 4, 2]
        .into_iter()
        .find(|g| c % g == 0 && c / g >= 2)
        .unwrap_or(1)
}

/// GroupNorm → SiLU → Conv → GroupNorm·(1+scale)+shift → SiLU → Conv → +skip.
///
/// The embedding enters as a per-channel scale and shift applied after the
/// second norm, so normalization cannot absorb it.
#[derive(Debug, Clone)]
struct ResBlock<S: Scalar> {
    gn1: GroupNorm<S>,
    conv1: Conv2d<S>,
    /// Projects the embedding to (scale, shift): 2·cout outputs.
    emb_proj: Linear<S>,
    gn2: GroupNorm<S>,
    conv2: Conv2d<S>,
    /// 1×1 projection when cin ≠ cout.
    skip: Option<Conv2d<S>>,
    cache: Option<ResCache<S>>,
}

#[derive(Debug, Clone)]
struct ResCache<S> {
    a1: Array4<S>,
    a2: Array4<S>,
    modulated: Array4<S>,
    scale: Array2<S>,
    emb: Array2<S>,
}

impl<S: Scalar> ResBlock<S> {
    fn new(cin: usize, cout: usize, emb_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            gn1: GroupNorm::new(norm_groups(cin), cin),
            conv1: Conv2d::new(cin, cout, 3, rng),
            emb_proj: Linear::new(emb_dim, 2 * cout, rng),
            gn2: GroupNorm::new(norm_groups(cout), cout),
            conv2: Conv2d::new(cout, cout, 3, rng),
            skip: (cin != cout).then(|| Conv2d::new(cin, cout, 1, rng)),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Array4<S>, emb: &Array2<S>) -> Array4<S> {
        let cout = self.gn2.channels();
        let a1 = self.gn1.forward(x);
        let h1 = self.conv1.forward(&silu(&a1));
        let ep = self.emb_proj.forward(&silu(emb));
        let scale = ep.slice(s![.., 0..cout]).to_owned();
        let shift = ep.slice(s![.., cout..]).to_owned();
        let a2 = self.gn2.forward(&h1);
        let mut modulated = a2.clone();
        for (bi, mut sample) in modulated.outer_iter_mut().enumerate() {
            for (ci, mut ch) in sample.outer_iter_mut().enumerate() {
                let s = S::one() + scale[[bi, ci]];
                let b = shift[[bi, ci]];
                ch.mapv_inplace(|v| v * s + b);
            }
        }
        let h3 = self.conv2.forward(&silu(&modulated));
        let out = match &mut self.skip {
            Some(proj) => h3 + &proj.forward(x),
            None => h3 + x,
        };
        self.cache = Some(ResCache { a1, a2, modulated, scale, emb: emb.clone() });
        out
    }

    /// Returns (input grad, embedding grad).
    fn backward(&mut self, gout: &Array4<S>) -> (Array4<S>, Array2<S>) {
        let cache = self.cache.take().expect("forward before backward");
        let gs2 = self.conv2.backward(gout);
        let gm = silu_backward(&cache.modulated, &gs2);
        // Modulation: m = a2·(1+scale) + shift, scale/shift per (batch,
        // channel) broadcast over (h, w).
        let (b, cout, _, _) = gm.dim();
        let mut ga2 = gm.clone();
        let mut gep = Array2::zeros((b, 2 * cout));
        for bi in 0..b {
            for ci in 0..cout {
                let s = S::one() + cache.scale[[bi, ci]];
                let gm_ch = gm.slice(s![bi, ci, .., ..]);
                let a2_ch = cache.a2.slice(s![bi, ci, .., ..]);
                gep[[bi, ci]] = (&gm_ch * &a2_ch).sum();
                gep[[bi, cout + ci]] = gm_ch.sum();
                ga2.slice_mut(s![bi, ci, .., ..]).mapv_inplace(|v| v * s);
            }
        }
        let gse = self.emb_proj.backward(&gep);
        let gemb = silu_backward(&cache.emb, &gse);
        let gh1 = self.gn2.backward(&ga2);
        let gs1 = self.conv1.backward(&gh1);
        let gx1 = self.gn1.backward(&silu_backward(&cache.a1, &gs1));
        let gx = match &mut self.skip {
            Some(proj) => gx1 + &proj.backward(gout),
            None => gx1 + gout,
        };
        (gx, gemb)
    }
}

impl<S: Scalar> Layer<S> for ResBlock<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        self.gn1.visit_params(&join_path(prefix, "gn1"), f);
        self.conv1.visit_params(&join_path(prefix, "conv1"), f);
        self.emb_proj.visit_params(&join_path(prefix, "emb_proj"), f);
        self.gn2.visit_params(&join_path(prefix, "gn2"), f);
        self.conv2.visit_params(&join_path(prefix, "conv2"), f);
        if let Some(skip) = &mut self.skip {
            skip.visit_params(&join_path(prefix, "skip"), f);
        }
    }

    fn zero_grads(&mut self) {
        self.gn1.zero_grads();
        self.conv1.zero_grads();
        self.emb_proj.zero_grads();
        self.gn2.zero_grads();
        self.conv2.zero_grads();
        if let Some(skip) = &mut self.skip {
            skip.zero_grads();
        }
    }
}

/// Two-layer MLP over the sinusoidal time embedding, with the optional
/// position term added to its output.
#[derive(Debug, Clone)]
struct TimeMlp<S: Scalar> {
    lin1: Linear<S>,
    lin2: Linear<S>,
    pos_proj: Option<Linear<S>>,
    cache: Option<Array2<S>>,
}

impl<S: Scalar> TimeMlp<S> {
    fn new(emb_dim: usize, position: bool, rng: &mut ChaCha8Rng) -> Self {
        TimeMlp {
            lin1: Linear::new(emb_dim, emb_dim * 2, rng),
            lin2: Linear::new(emb_dim * 2, emb_dim, rng),
            pos_proj: position.then(|| Linear::new(emb_dim, emb_dim, rng)),
            cache: None,
        }
    }

    fn forward(&mut self, sin_t: &Array2<S>, sin_p: Option<&Array2<S>>) -> Array2<S> {
        let pre = self.lin1.forward(sin_t);
        let mut out = self.lin2.forward(&silu(&pre));
        match (&mut self.pos_proj, sin_p) {
            (Some(proj), Some(p)) => out = out + &proj.forward(p),
            (None, None) => {}
            (Some(_), None) => panic!("position-conditioned model needs positions"),
            (None, Some(_)) => panic!("positions passed to a position-free model"),
        }
        self.cache = Some(pre);
        out
    }

    fn backward(&mut self, gout: &Array2<S>) {
        let pre = self.cache.take().expect("forward before backward");
        if let Some(proj) = &mut self.pos_proj {
            proj.backward(gout);
        }
        let gpre = self.lin2.backward(gout);
        self.lin1.backward(&silu_backward(&pre, &gpre));
    }
}

impl<S: Scalar> Layer<S> for TimeMlp<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        self.lin1.visit_params(&join_path(prefix, "lin1"), f);
        self.lin2.visit_params(&join_path(prefix, "lin2"), f);
        if let Some(proj) = &mut self.pos_proj {
            proj.visit_params(&join_path(prefix, "pos_proj"), f);
        }
    }

    fn zero_grads(&mut self) {
        self.lin1.zero_grads();
        self.lin2.zero_grads();
        if let Some(proj) = &mut self.pos_proj {
            proj.zero_grads();
        }
    }
}

/// Depth-axis residual unit: rearrange to (sites, c, n), run the residual
/// conv, rearrange back. Skipped entirely when `depth` is None.
#[derive(Debug, Clone)]
struct VolUnit<S: Scalar> {
    res: VolumetricResidual<S>,
}

impl<S: Scalar> VolUnit<S> {
    fn new(channels: usize) -> Self {
        VolUnit { res: VolumetricResidual::new(channels, 3) }
    }

    fn forward(&mut self, x: &Array4<S>, depth: Option<(usize, usize)>) -> Array4<S> {
        match depth {
            None => x.clone(),
            Some((b_v, n)) => {
                let (_, _, h, w) = x.dim();
                let g = rearrange_to_depth(x, b_v, n).expect("window batch shape");
                let y = self.res.forward(&g);
                rearrange_from_depth(&y, b_v, n, h, w).expect("window batch shape")
            }
        }
    }

    fn backward(&mut self, gout: &Array4<S>, depth: Option<(usize, usize)>) -> Array4<S> {
        match depth {
            None => gout.clone(),
            Some((b_v, n)) => {
                let (_, _, h, w) = gout.dim();
                let gg = rearrange_to_depth(gout, b_v, n).expect("window batch shape");
                let gx = self.res.backward(&gg);
                rearrange_from_depth(&gx, b_v, n, h, w).expect("window batch shape")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct UNet<S: Scalar> {
    desc: Descriptor,
    stem: Conv2d<S>,
    enc0: ResBlock<S>,
    down: ResBlock<S>,
    mid: ResBlock<S>,
    dec: ResBlock<S>,
    out_gn: GroupNorm<S>,
    out_conv: Conv2d<S>,
    temb: TimeMlp<S>,
    vol0: Option<VolUnit<S>>,
    vol1: Option<VolUnit<S>>,
    vol2: Option<VolUnit<S>>,
    cache: Option<UNetCache<S>>,
}

#[derive(Debug, Clone)]
struct UNetCache<S> {
    a_out: Array4<S>,
    depth: Option<(usize, usize)>,
}

impl<S: Scalar> UNet<S> {
    pub fn new(desc: &Descriptor, rng: &mut ChaCha8Rng) -> Result<Self> {
        desc.validate()?;
        let b = desc.base_channels;
        let e = desc.emb_dim;
        Ok(UNet {
            desc: desc.clone(),
            stem: Conv2d::new(desc.in_channels, b, 3, rng),
            enc0: ResBlock::new(b, b, e, rng),
            down: ResBlock::new(b, 2 * b, e, rng),
            mid: ResBlock::new(2 * b, 2 * b, e, rng),
            dec: ResBlock::new(3 * b, b, e, rng),
            out_gn: GroupNorm::new(norm_groups(b), b),
            // Zero-initialized head: the freshly initialized denoiser
            // predicts exactly zero noise, a stable starting point.
            out_conv: Conv2d::new_zero(b, desc.target_channels, 3),
            temb: TimeMlp::new(e, desc.position_conditioned, rng),
            vol0: desc.volumetric.then(|| VolUnit::new(b)),
            vol1: desc.volumetric.then(|| VolUnit::new(2 * b)),
            vol2: desc.volumetric.then(|| VolUnit::new(b)),
            cache: None,
        })
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.desc
    }

    /// Forward over a batch of slices.
    ///
    /// `x`: (b, in_channels, h, w) with h, w divisible by 2.
    /// `t`: one timestep per batch row.
    /// `pos`: normalized positions in [0,1], required iff the descriptor is
    /// position-conditioned.
    /// `depth`: Some((b_v, n)) applies the depth-axis layers treating the
    /// batch as b_v windows of n consecutive slices; None runs pure 2D.
    pub fn forward(
        &mut self,
        x: &Array4<S>,
        t: &[usize],
        pos: Option<&[f64]>,
        depth: Option<(usize, usize)>,
    ) -> Result<Array4<S>> {
        let (b, c, h, w) = x.dim();
        if c != self.desc.in_channels {
            return Err(Error::shape("unet input", format!("{} channels", self.desc.in_channels), format!("{c}")));
        }
        if t.len() != b {
            return Err(Error::shape("timesteps", format!("{b}"), format!("{}", t.len())));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::validation("input", format!("spatial extents must be even, got {h}x{w}")));
        }
        if let Some((b_v, n)) = depth {
            if b_v * n != b {
                return Err(Error::shape("depth batch", format!("{b_v}*{n}"), format!("{b}")));
            }
            if self.vol0.is_none() {
                return Err(Error::validation("depth", "model has no volumetric layers".to_string()));
            }
        }
        if self.desc.position_conditioned != pos.is_some() {
            return Err(Error::validation(
                "pos",
                format!("position-conditioned={} but positions {}", self.desc.position_conditioned, if pos.is_some() { "given" } else { "missing" }),
            ));
        }
        if let Some(ps) = pos {
            if ps.len() != b {
                return Err(Error::shape("positions", format!("{b}"), format!("{}", ps.len())));
            }
        }

        let t_vals = Array1::from_iter(t.iter().map(|&ti| S::c(ti as f64)));
        let sin_t = sinusoidal_embedding(t_vals.view(), self.desc.emb_dim, EMBED_MAX_PERIOD);
        let sin_p = pos.map(|ps| {
            let vals = Array1::from_iter(ps.iter().map(|&p| S::c(p * POSITION_SCALE)));
            sinusoidal_embedding(vals.view(), self.desc.emb_dim, EMBED_MAX_PERIOD)
        });
        let emb = self.temb.forward(&sin_t, sin_p.as_ref());

        let h0 = self.stem.forward(x);
        let h1 = self.enc0.forward(&h0, &emb);
        let v1 = match &mut self.vol0 {
            Some(u) => u.forward(&h1, depth),
            None => h1,
        };
        let d = avg_pool2(&v1);
        let h2 = self.down.forward(&d, &emb);
        let v2 = match &mut self.vol1 {
            Some(u) => u.forward(&h2, depth),
            None => h2,
        };
        let h3 = self.mid.forward(&v2, &emb);
        let u = upsample_nearest2(&h3);
        let cat = ndarray::concatenate(Axis(1), &[u.view(), v1.view()]).expect("matching extents");
        let h4 = self.dec.forward(&cat, &emb);
        let v4 = match &mut self.vol2 {
            Some(unit) => unit.forward(&h4, depth),
            None => h4,
        };
        let a_out = self.out_gn.forward(&v4);
        let out = self.out_conv.forward(&silu(&a_out));
        self.cache = Some(UNetCache { a_out, depth });
        Ok(out)
    }

    /// Backward from the output gradient; accumulates parameter gradients and
    /// returns the input gradient.
    pub fn backward(&mut self, gout: &Array4<S>) -> Array4<S> {
        let cache = self.cache.take().expect("forward before backward");
        let depth = cache.depth;
        let gs = self.out_conv.backward(gout);
        let gv4 = self.out_gn.backward(&silu_backward(&cache.a_out, &gs));
        let gh4 = match &mut self.vol2 {
            Some(u) => u.backward(&gv4, depth),
            None => gv4,
        };
        let (gcat, gemb_dec) = self.dec.backward(&gh4);
        let base = self.desc.base_channels;
        let gu = gcat.slice(s![.., ..2 * base, .., ..]).to_owned();
        let gv1_skip = gcat.slice(s![.., 2 * base.., .., ..]).to_owned();
        let gh3 = upsample_nearest2_backward(&gu);
        let (gv2, gemb_mid) = self.mid.backward(&gh3);
        let gh2 = match &mut self.vol1 {
            Some(u) => u.backward(&gv2, depth),
            None => gv2,
        };
        let (gd, gemb_down) = self.down.backward(&gh2);
        let gv1 = avg_pool2_backward(&gd) + &gv1_skip;
        let gh1 = match &mut self.vol0 {
            Some(u) => u.backward(&gv1, depth),
            None => gv1,
        };
        let (gh0, gemb_enc) = self.enc0.backward(&gh1);
        let gemb = gemb_enc + &gemb_down + &gemb_mid + &gemb_dec;
        self.temb.backward(&gemb);
        self.stem.backward(&gh0)
    }
}

impl<S: Scalar> Layer<S> for UNet<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        self.stem.visit_params(&join_path(prefix, "stem"), f);
        self.enc0.visit_params(&join_path(prefix, "enc0"), f);
        self.down.visit_params(&join_path(prefix, "down"), f);
        self.mid.visit_params(&join_path(prefix, "mid"), f);
        self.dec.visit_params(&join_path(prefix, "dec"), f);
        self.out_gn.visit_params(&join_path(prefix, "out_gn"), f);
        self.out_conv.visit_params(&join_path(prefix, "out_conv"), f);
        self.temb.visit_params(&join_path(prefix, "temb"), f);
        if let Some(u) = &mut self.vol0 {
            u.res.visit_params(&join_path(prefix, "vol0"), f);
        }
        if let Some(u) = &mut self.vol1 {
            u.res.visit_params(&join_path(prefix, "vol1"), f);
        }
        if let Some(u) = &mut self.vol2 {
            u.res.visit_params(&join_path(prefix, "vol2"), f);
        }
    }

    fn zero_grads(&mut self) {
        self.stem.zero_grads();
        self.enc0.zero_grads();
        self.down.zero_grads();
        self.mid.zero_grads();
        self.dec.zero_grads();
        self.out_gn.zero_grads();
        self.out_conv.zero_grads();
        self.temb.zero_grads();
        for u in [&mut self.vol0, &mut self.vol1, &mut self.vol2].into_iter().flatten() {
            u.res.zero_grads();
        }
    }
}

/// True for parameter paths that belong to depth-axis (volumetric) layers.
pub fn is_volumetric_param(name: &str) -> bool {
    name.starts_with("vol")
}
