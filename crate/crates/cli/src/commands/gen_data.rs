//! `gen-data`: generate a phantom dataset into the configured directory.

use volgen_core::phantom::{generate_dataset, DatasetManifest};
use volgen_core::{Error, Result};

use crate::config::{require, RunConfig};
use crate::runlog::RunManifest;

pub fn run(config: &RunConfig) -> Result<()> {
    let dir = config.dataset_dir()?;
    let count = *require(&config.count, "count")?;
    let spec = config.phantom();
    let seed = config.seed();

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = generate_dataset(&spec, count, seed, dir)?;

    let mut log = RunManifest::new("gen-data", config)?;
    log.record_output(dir.join(DatasetManifest::FILE_NAME));
    for e in &manifest.entries {
        log.record_output(manifest.volume_path(e));
        log.record_output(manifest.mask_path(e));
    }
    log.write(dir)?;

    println!(
        "generated {} phantoms ({}x{}, depth {}..={}) into {}",
        manifest.n,
        spec.height,
        spec.width,
        spec.depth_range[0],
        spec.depth_range[1],
        dir.display()
    );
    Ok(())
}
