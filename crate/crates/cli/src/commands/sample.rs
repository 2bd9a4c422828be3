//! `sample`, `enhance`, `de-enhance`: one campaign runner. Every job takes a
//! source mask (optionally augmented), a start position, and an informed
//! slice resolved per policy, assembles a volume, and writes it with its
//! mask and a per-window assembly log. De-enhance resolves the informed
//! slice once and shares it across the whole campaign.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use volgen_core::augment::{augment_mask, AugmentParams};
use volgen_core::conditioning::{select_informed_ic, InformedProvenance};
use volgen_core::model::{load_denoiser, load_slice_model, DenoiserModel, SliceModel, Stage};
use volgen_core::phantom::{
    read_mask, read_volume, write_mask, write_volume, DatasetManifest, ManifestEntry, Split,
};
use volgen_core::sampler::{assemble_volume, sample_informed_slice, DenoiserSampler, SamplerConfig};
use volgen_core::schedule::Schedule;
use volgen_core::seeds::{derive_seed, rng_from_seed};
use volgen_core::{Error, Result};

use crate::config::{EnhancePolicy, InformedPolicy, RunConfig};
use crate::runlog::{require_file, RunManifest};

/// Seed-derivation tags for the independent random decisions of a job.
const TAG_AUGMENT: u64 = 0x10;
const TAG_DRAW: u64 = 0x11;
const TAG_INFORMED_GEN: u64 = 0x12;
const TAG_ASSEMBLE: u64 = 0x13;
/// Run-level tag for the single shared informed slice of de-enhance.
const TAG_SHARED_INFORMED: u64 = 0x14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Free generation; the informed slice defaults to each source volume's
    /// own (true) slice, so outputs reproduce the source appearance.
    Sample,
    /// Style injection; the informed slice defaults to cross-sampling.
    Enhance,
    /// Appearance normalization: one informed slice for the whole campaign.
    DeEnhance,
}

impl Mode {
    fn command(self) -> &'static str {
        match self {
            Mode::Sample => "sample",
            Mode::Enhance => "enhance",
            Mode::DeEnhance => "de-enhance",
        }
    }

    pub fn default_policy(self) -> EnhancePolicy {
        EnhancePolicy {
            informed: match self {
                Mode::Sample => InformedPolicy::SelfSlice,
                Mode::Enhance | Mode::DeEnhance => InformedPolicy::Ic,
            },
            ..EnhancePolicy::default()
        }
    }
}

/// Entry filter; `All` takes the manifest as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitFilter {
    Train,
    Test,
    #[default]
    All,
}

impl SplitFilter {
    fn accepts(self, split: Split) -> bool {
        match self {
            SplitFilter::Train => split == Split::Train,
            SplitFilter::Test => split == Split::Test,
            SplitFilter::All => true,
        }
    }
}

pub struct CampaignArgs {
    pub mode: Mode,
    pub split: SplitFilter,
    pub jobs: usize,
    pub no_volumetric: bool,
}

struct Job {
    index: usize,
    entry: ManifestEntry,
    repeat: usize,
    seed: u64,
}

struct JobOutput {
    entry: ManifestEntry,
    log_name: String,
}

pub fn run(config: &RunConfig, args: &CampaignArgs) -> Result<()> {
    let policy = config.enhance.clone().unwrap_or_else(|| args.mode.default_policy());
    policy.validate()?;
    let dataset = config.dataset_dir()?;
    let out_dir = config.out_dir()?.clone();
    let manifest_path = dataset.join(DatasetManifest::FILE_NAME);
    require_file(&manifest_path, "run gen-data first")?;
    let manifest = DatasetManifest::load(dataset)?;

    let denoiser_path = config.denoiser_path()?;
    require_file(denoiser_path, "run train-slice and train-volume first")?;
    let (denoiser, meta) = load_denoiser(denoiser_path)?;
    let schedule = Schedule::from_params(&meta.schedule)?;
    let volumetric = denoiser.stage() == Stage::Volumetric && !args.no_volumetric;

    let mut log = RunManifest::new(args.mode.command(), config)?;
    log.hash_input(&manifest_path)?;
    log.hash_input(denoiser_path)?;

    // The slice model is loaded only when the policy generates informed
    // slices; a missing checkpoint then names the stage that produces it.
    let slice_model = match policy.informed {
        InformedPolicy::Ig => {
            let path = config.slice_model_path()?;
            require_file(path, "run train-posmodel first")?;
            log.hash_input(path)?;
            Some(load_slice_model(path)?.0)
        }
        _ => None,
    };

    let sampler_cfg = config.sampler();
    sampler_cfg.validate()?;
    let run_seed = config.seed();
    let spec = config.phantom();

    // De-enhance fixes the informed slice before any job runs.
    let shared_informed = if args.mode == Mode::DeEnhance {
        Some(resolve_shared_informed(&policy, &manifest, slice_model.clone(), config, run_seed)?)
    } else {
        None
    };
    if let Some((_, prov)) = &shared_informed {
        println!("de-enhance informed slice: {prov}");
    }
    if let InformedPolicy::File(path) = &policy.informed {
        log.hash_input(path)?;
    }

    let jobs: Vec<Job> = manifest
        .entries
        .iter()
        .filter(|e| args.split.accepts(e.split))
        .flat_map(|e| (0..policy.repeats).map(move |r| (e.clone(), r)))
        .enumerate()
        .map(|(index, (entry, repeat))| Job {
            index,
            entry,
            repeat,
            seed: derive_seed(run_seed, index as u64),
        })
        .collect();
    if jobs.is_empty() {
        return Err(Error::validation("split", "no source volumes in the selected split"));
    }

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let ctx = JobContext {
        manifest: &manifest,
        policy: &policy,
        sampler_cfg: &sampler_cfg,
        schedule: &schedule,
        spec_lesion_label: spec.lesion_label(),
        out_dir: &out_dir,
        shared_informed: shared_informed.as_ref(),
        volumetric,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::validation("jobs", format!("worker pool: {e}")))?;
    let mut outputs: Vec<(usize, JobOutput)> = pool.install(|| {
        jobs.par_iter()
            .map_init(
                || (denoiser.clone(), slice_model.clone()),
                |(den, slm), job| run_job(den, slm.as_mut(), job, &ctx).map(|o| (job.index, o)),
            )
            .collect::<Result<Vec<_>>>()
    })?;
    outputs.sort_by_key(|(i, _)| *i);

    let mut entries = Vec::with_capacity(outputs.len());
    for (_, o) in outputs {
        log.record_output(out_dir.join(&o.entry.volume));
        log.record_output(out_dir.join(&o.entry.mask));
        log.record_output(out_dir.join(&o.log_name));
        log.assembly_logs.insert(o.entry.id.clone(), o.log_name);
        entries.push(o.entry);
    }
    let count = entries.len();
    let mut generated = DatasetManifest::new(entries);
    generated.save(&out_dir)?;
    log.record_output(out_dir.join(DatasetManifest::FILE_NAME));
    log.write(&out_dir)?;

    println!(
        "{}: {count} volumes into {} (informed={}, volumetric={volumetric}, inpainting={})",
        args.mode.command(),
        out_dir.display(),
        policy.informed,
        sampler_cfg.overlapped_inpainting,
    );
    Ok(())
}

struct JobContext<'a> {
    manifest: &'a DatasetManifest,
    policy: &'a EnhancePolicy,
    sampler_cfg: &'a SamplerConfig,
    schedule: &'a Schedule,
    spec_lesion_label: u16,
    out_dir: &'a Path,
    shared_informed: Option<&'a (Array2<f32>, InformedProvenance)>,
    volumetric: bool,
}

fn run_job(
    denoiser: &mut DenoiserModel,
    mut slice_model: Option<&mut SliceModel>,
    job: &Job,
    ctx: &JobContext<'_>,
) -> Result<JobOutput> {
    let entry = &job.entry;
    let mask = read_mask(ctx.manifest.mask_path(entry))?;
    let mask = if ctx.policy.mask_augment {
        let translate = mask
            .data()
            .iter()
            .any(|&l| l == ctx.spec_lesion_label)
            .then_some(ctx.spec_lesion_label);
        let params = AugmentParams::desk_scale(mask.dims().0, translate);
        augment_mask(&mask, &params, derive_seed(job.seed, TAG_AUGMENT))?
    } else {
        mask
    };
    let (h, w, z) = mask.dims();

    let mut rng = rng_from_seed(derive_seed(job.seed, TAG_DRAW));
    let mut p: f64 = rng.random();
    let (informed, provenance) = if let Some((slice, prov)) = ctx.shared_informed {
        (slice.clone(), prov.clone())
    } else {
        match &ctx.policy.informed {
            InformedPolicy::Ic => select_informed_ic(ctx.manifest, &mut rng)?,
            InformedPolicy::Ig => {
                let model = slice_model
                    .as_deref_mut()
                    .ok_or_else(|| Error::validation("informed", "ig policy without slice model"))?;
                let slice = sample_informed_slice(
                    model,
                    p,
                    h,
                    w,
                    ctx.schedule,
                    ctx.sampler_cfg,
                    derive_seed(job.seed, TAG_INFORMED_GEN),
                )?;
                (slice, InformedProvenance::Generated { p })
            }
            InformedPolicy::SelfSlice => {
                // The source volume's own slice, placed at its true position
                // so the first window grows around where it belongs.
                let vol = read_volume(ctx.manifest.volume_path(entry))?;
                let index = rng.random_range(0..vol.depth());
                p = if vol.depth() > 1 { index as f64 / (vol.depth() - 1) as f64 } else { 0.5 };
                (
                    vol.slice(index).to_owned(),
                    InformedProvenance::Volume { id: entry.id.clone(), index },
                )
            }
            InformedPolicy::File(path) => read_informed_file(path)?,
        }
    };

    let mask_encoding = *denoiser.mask_encoding();
    let encoder = *denoiser.encoder();
    let mut sampler = DenoiserSampler { model: denoiser, volumetric: ctx.volumetric };
    let (volume, records) = assemble_volume(
        &mut sampler,
        &mask,
        p,
        &informed,
        provenance,
        &mask_encoding,
        &encoder,
        ctx.sampler_cfg,
        ctx.schedule,
        derive_seed(job.seed, TAG_ASSEMBLE),
    )?;

    let id = format!("{}-r{}", entry.id, job.repeat);
    let vol_name = format!("{id}.vol");
    let mask_name = format!("{id}.msk");
    let log_name = format!("{id}.jsonl");
    write_volume(ctx.out_dir.join(&vol_name), &volume)?;
    write_mask(ctx.out_dir.join(&mask_name), &mask)?;
    let log_path = ctx.out_dir.join(&log_name);
    let mut file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    for record in &records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
    }

    Ok(JobOutput {
        entry: ManifestEntry {
            id,
            volume: vol_name,
            mask: mask_name,
            z: z as u32,
            split: entry.split,
            style: entry.style.clone(),
        },
        log_name,
    })
}

/// Resolve the one informed slice a de-enhance campaign shares.
fn resolve_shared_informed(
    policy: &EnhancePolicy,
    manifest: &DatasetManifest,
    slice_model: Option<SliceModel>,
    config: &RunConfig,
    run_seed: u64,
) -> Result<(Array2<f32>, InformedProvenance)> {
    let seed = derive_seed(run_seed, TAG_SHARED_INFORMED);
    match &policy.informed {
        InformedPolicy::Ic => select_informed_ic(manifest, &mut rng_from_seed(seed)),
        InformedPolicy::Ig => {
            let mut model = slice_model
                .ok_or_else(|| Error::validation("informed", "ig policy without slice model"))?;
            let spec = config.phantom();
            let slice = sample_informed_slice(
                &mut model,
                0.5,
                spec.height,
                spec.width,
                &Schedule::from_params(&config.schedule_params())?,
                &config.sampler(),
                seed,
            )?;
            Ok((slice, InformedProvenance::Generated { p: 0.5 }))
        }
        InformedPolicy::File(path) => read_informed_file(path),
        InformedPolicy::SelfSlice => Err(Error::validation(
            "informed",
            "de-enhance shares one informed slice; use ic, ig, or file:PATH",
        )),
    }
}

/// An informed slice on disk is a single-slice volume file.
fn read_informed_file(path: &Path) -> Result<(Array2<f32>, InformedProvenance)> {
    require_file(path, "informed slice file")?;
    let vol = read_volume(path)?;
    if vol.depth() != 1 {
        return Err(Error::validation(
            "informed",
            format!("expected a single-slice volume, got depth {}", vol.depth()),
        ));
    }
    Ok((
        vol.slice(0).to_owned(),
        InformedProvenance::File { path: path.display().to_string() },
    ))
}
