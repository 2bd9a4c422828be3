//! `evaluate`: compare a generated dataset against its reference — slice
//! Fréchet distances on all three anatomical axes, paired MS-SSIM, mask
//! adherence via intensity-band label recovery, and volume consistency.

use std::collections::BTreeMap;
use std::path::PathBuf;

use volgen_core::metrics::{
    dice, extract_slice_features, frechet_distance, ms_ssim, volume_consistency, MetricReport,
    SliceAxis,
};
use volgen_core::phantom::{read_mask, read_volume, recover_labels, DatasetManifest, Volume};
use volgen_core::{Error, Result};

use crate::config::RunConfig;
use crate::runlog::{require_file, RunManifest};

pub fn run(config: &RunConfig, generated_override: Option<&PathBuf>) -> Result<()> {
    let reference_dir = config.dataset_dir()?;
    let generated_dir = generated_override
        .or(config.generated.as_ref())
        .or(config.out_dir.as_ref())
        .ok_or_else(|| Error::validation("generated", "no generated dataset directory configured"))?;

    let ref_manifest_path = reference_dir.join(DatasetManifest::FILE_NAME);
    let gen_manifest_path = generated_dir.join(DatasetManifest::FILE_NAME);
    require_file(&ref_manifest_path, "run gen-data first")?;
    require_file(&gen_manifest_path, "run sample/enhance first")?;

    let mut log = RunManifest::new("evaluate", config)?;
    log.hash_input(&ref_manifest_path)?;
    log.hash_input(&gen_manifest_path)?;

    let reference = DatasetManifest::load(reference_dir)?;
    let generated = DatasetManifest::load(generated_dir)?;

    let ref_volumes: Vec<Volume> = reference
        .entries
        .iter()
        .map(|e| read_volume(reference.volume_path(e)))
        .collect::<Result<_>>()?;
    let gen_volumes: Vec<Volume> = generated
        .entries
        .iter()
        .map(|e| read_volume(generated.volume_path(e)))
        .collect::<Result<_>>()?;

    // Generated ids follow "<source>-r<repeat>"; MS-SSIM pairs each output
    // with its source volume. A generated set with no resolvable sources
    // cannot be paired and is an input error.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (gi, ge) in generated.entries.iter().enumerate() {
        let Some((source_id, _)) = ge.id.rsplit_once("-r") else { continue };
        if let Some(ri) = reference.entries.iter().position(|re| re.id == source_id) {
            pairs.push((gi, ri));
        }
    }
    if pairs.is_empty() {
        return Err(Error::validation(
            "generated",
            "no generated volume pairs with a reference source (ids must be <source>-r<N>)",
        ));
    }

    let scales = pairs
        .iter()
        .map(|&(gi, ri)| {
            let (gh, gw, _) = gen_volumes[gi].dims();
            let (rh, rw, _) = ref_volumes[ri].dims();
            supported_scales(gh.min(gw).min(rh).min(rw))
        })
        .min()
        .unwrap_or(1);
    let mut ssim_sum = 0.0;
    for &(gi, ri) in &pairs {
        ssim_sum += ms_ssim(&gen_volumes[gi], &ref_volumes[ri], scales)?;
    }
    let ms_ssim_mean = ssim_sum / pairs.len() as f64;

    let projector_seed = config.projector_seed.unwrap_or(0);
    let mut fids = [0.0f64; 3];
    for (i, axis) in [SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal]
        .into_iter()
        .enumerate()
    {
        let a = extract_slice_features(&ref_volumes, axis, projector_seed)?;
        let b = extract_slice_features(&gen_volumes, axis, projector_seed)?;
        fids[i] = frechet_distance(a.view(), b.view())?;
    }

    // Adherence: recover labels from generated intensities alone (one affine
    // calibration per volume) and compare against the conditioning mask.
    let organ_count = config.phantom().organ_count;
    let mut dice_sums: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    let mut consistency_sum = 0.0;
    for (gi, ge) in generated.entries.iter().enumerate() {
        let mask = read_mask(generated.mask_path(ge))?;
        let recovered = recover_labels(&gen_volumes[gi], &mask, organ_count)?;
        for label in 1..=mask.max_label() {
            let d = dice(&mask, &recovered, label)?;
            let slot = dice_sums.entry(label).or_insert((0.0, 0));
            slot.0 += d;
            slot.1 += 1;
        }
        consistency_sum += volume_consistency(&gen_volumes[gi])?;
    }
    let dice_per_label: BTreeMap<u16, f64> =
        dice_sums.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect();

    let report = MetricReport {
        fid_a: fids[0],
        fid_c: fids[1],
        fid_s: fids[2],
        ms_ssim: ms_ssim_mean,
        ms_ssim_scales: scales,
        dice_per_label,
        consistency: consistency_sum / gen_volumes.len() as f64,
        real_volumes: ref_volumes.len(),
        generated_volumes: gen_volumes.len(),
    };
    report.validate()?;

    let report_dir = config.out_dir.as_ref().unwrap_or(generated_dir);
    std::fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;
    let report_path = report_dir.join("metric-report.json");
    let json = serde_json::to_vec_pretty(&report)?;
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    log.record_output(&report_path);
    log.write(report_dir)?;

    let mean_dice = if report.dice_per_label.is_empty() {
        f64::NAN
    } else {
        report.dice_per_label.values().sum::<f64>() / report.dice_per_label.len() as f64
    };
    println!(
        "evaluate: fid_a={:.4} fid_c={:.4} fid_s={:.4} ms_ssim={:.4} dice={:.3} consistency={:.4} ({} generated vs {} reference)",
        report.fid_a,
        report.fid_c,
        report.fid_s,
        report.ms_ssim,
        mean_dice,
        report.consistency,
        report.generated_volumes,
        report.real_volumes,
    );
    Ok(())
}

/// Largest dyadic scale count (capped at 5) whose coarsest level still fits
/// the 11-tap similarity window.
fn supported_scales(min_dim: usize) -> usize {
    let mut scales = 1;
    while scales < 5 && (min_dim >> scales) >= 11 {
        scales += 1;
    }
    scales
}
