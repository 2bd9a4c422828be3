//! Temporary diagnostics for the trained acceptance fixture. Not part of the
//! suite; run explicitly with `cargo test -p volgen-core --test diag -- --nocapture`.

use std::path::PathBuf;

use ndarray::{s, Array3};
use rand::Rng;

use volgen_core::conditioning::{build_condition_stack, Encoder, InformedProvenance};
use volgen_core::metrics::ms_ssim;
use volgen_core::model::load_denoiser;
use volgen_core::phantom::{read_mask, read_volume, DatasetManifest, Split};
use volgen_core::sampler::{
    assemble_volume, sample_window, DenoiserSampler, Method, SamplerConfig,
};
use volgen_core::schedule::default_schedule;
use volgen_core::seeds::rng_from_seed;

fn paths() -> (PathBuf, PathBuf) {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    (
        root.join("data-n80-s7"),
        root.join("denoiser-b8e16-i5000x2000-bv1w8-s41.gemv"),
    )
}

#[test]
fn denoiser_quality_probe() {
    let (data_dir, ckpt) = paths();
    if !ckpt.is_file() {
        eprintln!("no cached checkpoint; skipping");
        return;
    }
    let (mut model, meta) = load_denoiser(&ckpt).unwrap();
    eprintln!("checkpoint: {:?}", meta.kind);
    let manifest = DatasetManifest::load(&data_dir).unwrap();
    let entry = manifest.split_entries(Split::Train).next().unwrap();
    let vol = read_volume(data_dir.join(&entry.volume)).unwrap();
    let mask = read_mask(data_dir.join(&entry.mask)).unwrap();
    let sched = default_schedule();
    let encoding = *model.mask_encoding();
    let n = 8;
    let z = vol.depth();
    let j = (z / 2).min(z - n);

    // Training-objective probe: eps-prediction MSE on a clean window at
    // several depths of the chain. Untrained would sit near 1.0.
    let window = vol.data().slice(s![j..j + n, .., ..]).to_owned();
    let mask_win = mask.data().slice(s![j..j + n, .., ..]);
    let informed = vol.slice(j + n / 2).to_owned();
    let cond = build_condition_stack(
        mask_win,
        informed.view(),
        &encoding,
        &Encoder::Identity,
        InformedProvenance::Volume { id: entry.id.clone(), index: j + n / 2 },
    )
    .unwrap();
    let mut rng = rng_from_seed(99);
    for t in [50, 200, 500, 800, 1000] {
        let eps = Array3::from_shape_fn(window.dim(), |_| {
            rng.sample::<f32, _>(rand_distr::StandardNormal)
        });
        let noisy = sched.forward_diffuse(&window, t, &eps).unwrap();
        for volumetric in [true, false] {
            let eps_hat = model.predict_noise(&noisy, &cond, t, volumetric).unwrap();
            let mse = (&eps_hat - &eps).mapv(|d| (d * d) as f64).mean().unwrap();
            let pred_mag = eps_hat.mapv(|v| v.abs() as f64).mean().unwrap();
            eprintln!("t={t:4} volumetric={volumetric}: eps MSE {mse:.4}, mean|eps_hat| {pred_mag:.4}");
        }
    }

    // Single-window sample: does one window already look like the subject?
    let cfg = SamplerConfig {
        method: Method::Ddim,
        ddim_steps: 25,
        eta: 0.0,
        window_length: n,
        overlap: 1,
        ..SamplerConfig::default()
    };
    let mut sampler = DenoiserSampler { model: &mut model, volumetric: true };
    let out = sample_window(&mut sampler, &cond, &cfg, None, &sched, 4242).unwrap();
    let stats = |a: &Array3<f32>| {
        let mean = a.mean().unwrap();
        let sd = a.mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in a.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        format!("mean {mean:.3} sd {sd:.3} range [{lo:.3}, {hi:.3}]")
    };
    eprintln!("true window:    {}", stats(&window));
    eprintln!("sampled window: {}", stats(&out));
    let corr = {
        let a = &window - window.mean().unwrap();
        let b = &out - out.mean().unwrap();
        let num = (&a * &b).sum() as f64;
        (num / ((a.mapv(|v| v * v).sum() * b.mapv(|v| v * v).sum()) as f64).sqrt()).max(-1.0)
    };
    eprintln!("window correlation with truth: {corr:.4}");

    // Full assembly against the subject's own volume.
    let informed_full = vol.slice(z / 2).to_owned();
    let (gen, _) = assemble_volume(
        &mut sampler,
        &mask,
        (z / 2) as f64 / (z - 1) as f64,
        &informed_full,
        InformedProvenance::Volume { id: entry.id.clone(), index: z / 2 },
        &encoding,
        &Encoder::Identity,
        &cfg,
        &sched,
        777,
    )
    .unwrap();
    eprintln!("true volume:      {}", stats(vol.data()));
    eprintln!("assembled volume: {}", stats(gen.data()));
    eprintln!("assembled MS-SSIM vs own truth: {:.4}", ms_ssim(&gen, &vol, 2).unwrap());
    eprintln!(
        "true-vs-other-true MS-SSIM baseline: {:.4}",
        ms_ssim(
            &vol,
            &read_volume(
                data_dir.join(&manifest.split_entries(Split::Train).nth(1).unwrap().volume)
            )
            .map(|v| {
                // Crop or pad depth to match for a rough baseline comparison.
                let (h, w, _) = v.dims();
                let zz = v.depth().min(vol.depth());
                let mut c = Array3::zeros((vol.depth(), h, w));
                c.slice_mut(s![..zz, .., ..]).assign(&v.data().slice(s![..zz, .., ..]));
                volgen_core::phantom::Volume::new(c).unwrap()
            })
            .unwrap(),
            2
        )
        .unwrap()
    );
}
