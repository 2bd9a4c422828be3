//! `train-slice`, `train-volume`, `train-posmodel`: the two denoiser stages
//! and the position-conditioned slice model. Single-process, single-writer.

use std::path::Path;

use volgen_core::conditioning::Encoder;
use volgen_core::model::{
    load_denoiser, save_denoiser, save_slice_model, train_position_slice_model, train_stage,
    DenoiserModel, SliceModel, Stage,
};
use volgen_core::phantom::DatasetManifest;
use volgen_core::schedule::Schedule;
use volgen_core::seeds::derive_seed;
use volgen_core::{Error, Result};

use crate::config::{require, RunConfig};
use crate::runlog::{require_file, RunManifest};

/// Seed-derivation tags, one per independent random decision of a run.
const TAG_MODEL_INIT: u64 = 0x01;
const TAG_TRAIN: u64 = 0x02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    Slice,
    Volume,
    Posmodel,
}

impl TrainKind {
    fn command(self) -> &'static str {
        match self {
            TrainKind::Slice => "train-slice",
            TrainKind::Volume => "train-volume",
            TrainKind::Posmodel => "train-posmodel",
        }
    }
}

pub fn run(kind: TrainKind, config: &RunConfig) -> Result<()> {
    let dataset = config.dataset_dir()?;
    let manifest_path = dataset.join(DatasetManifest::FILE_NAME);
    require_file(&manifest_path, "run gen-data first")?;
    let manifest = DatasetManifest::load(dataset)?;
    let params = config.schedule_params();
    let schedule = Schedule::from_params(&params)?;
    let seed = config.seed();

    let mut log = RunManifest::new(kind.command(), config)?;
    log.hash_input(&manifest_path)?;

    let checkpoint_dir = checkpoint_parent(kind, config)?.to_path_buf();
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::io(&checkpoint_dir, e))?;

    let losses = match kind {
        TrainKind::Slice => {
            let section = require(&config.train_slice, "train_slice")?;
            let path = config.denoiser_path()?;
            let spec = config.phantom();
            let mut model = DenoiserModel::init(
                config.model.base_channels,
                config.model.emb_dim,
                config.model.encoding_for(&spec),
                Encoder::Identity,
                derive_seed(seed, TAG_MODEL_INIT),
            )?;
            let cfg = section.to_core(Stage::Slice, derive_seed(seed, TAG_TRAIN));
            let losses = train_stage(&mut model, &manifest, &schedule, &cfg)?;
            save_denoiser(path, &mut model, &params, seed)?;
            log.record_output(path);
            losses
        }
        TrainKind::Volume => {
            let section = require(&config.train_volume, "train_volume")?;
            let path = config.denoiser_path()?;
            require_file(path, "run train-slice first")?;
            log.hash_input(path)?;
            let (mut model, meta) = load_denoiser(path)?;
            let schedule = Schedule::from_params(&meta.schedule)?;
            let cfg = section.to_core(Stage::Volumetric, derive_seed(seed, TAG_TRAIN));
            let losses = train_stage(&mut model, &manifest, &schedule, &cfg)?;
            save_denoiser(path, &mut model, &meta.schedule, seed)?;
            log.record_output(path);
            losses
        }
        TrainKind::Posmodel => {
            let section = require(&config.train_posmodel, "train_posmodel")?;
            let path = config.slice_model_path()?;
            let mut model = SliceModel::init(
                config.model.base_channels,
                config.model.emb_dim,
                derive_seed(seed, TAG_MODEL_INIT),
            )?;
            let cfg = section.to_core(Stage::Slice, derive_seed(seed, TAG_TRAIN));
            let losses = train_position_slice_model(&mut model, &manifest, &schedule, &cfg)?;
            save_slice_model(path, &mut model, &params, seed)?;
            log.record_output(path);
            losses
        }
    };

    let losses_path = checkpoint_dir.join(format!("losses-{}.json", kind.command()));
    let json = serde_json::to_vec(&losses)?;
    std::fs::write(&losses_path, json).map_err(|e| Error::io(&losses_path, e))?;
    log.record_output(&losses_path);
    log.write(&checkpoint_dir)?;

    let head = mean(&losses[..losses.len().min(50)]);
    let tail = mean(&losses[losses.len().saturating_sub(50)..]);
    println!(
        "{}: {} iterations, loss {:.4} -> {:.4}",
        kind.command(),
        losses.len(),
        head,
        tail
    );
    Ok(())
}

fn checkpoint_parent(kind: TrainKind, config: &RunConfig) -> Result<&Path> {
    let path = match kind {
        TrainKind::Slice | TrainKind::Volume => config.denoiser_path()?,
        TrainKind::Posmodel => config.slice_model_path()?,
    };
    Ok(path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
