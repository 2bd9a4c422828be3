//! `split`: assign a train/test holdout inside an existing dataset manifest.

use volgen_core::phantom::{split_dataset, DatasetManifest, Split};
use volgen_core::Result;

use crate::config::{require, RunConfig};
use crate::runlog::{require_file, RunManifest};

pub fn run(config: &RunConfig) -> Result<()> {
    let dir = config.dataset_dir()?;
    let fraction = *require(&config.train_fraction, "train_fraction")?;
    let manifest_path = dir.join(DatasetManifest::FILE_NAME);
    require_file(&manifest_path, "run gen-data first")?;

    let mut log = RunManifest::new("split", config)?;
    log.hash_input(&manifest_path)?;

    let mut manifest = DatasetManifest::load(dir)?;
    split_dataset(&mut manifest, fraction, config.seed())?;
    manifest.save(dir)?;

    log.record_output(&manifest_path);
    log.write(dir)?;

    let train = manifest.split_entries(Split::Train).count();
    let test = manifest.split_entries(Split::Test).count();
    println!("split {}: {train} train, {test} test", dir.display());
    Ok(())
}
