//! Full-volume assembly: plan the windows, sample each one with its pins
//! and recursively propagated informed slice, and stitch the result.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::plan::{window_plan, Direction};
use super::window::{sample_window, PinSpec};
use super::{NoisePredictor, SamplerConfig};
use crate::conditioning::{build_condition_stack, Encoder, InformedProvenance, MaskEncoding};
use crate::error::{Error, Result};
use crate::phantom::{MaskVolume, Volume};
use crate::schedule::Schedule;
use crate::seeds::derive_seed;

/// One line of the assembly log: which window ran, what it pinned, whose
/// appearance cue conditioned it, and the noise seed it consumed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblyJobRecord {
    pub job_index: usize,
    pub start: usize,
    pub direction: Option<Direction>,
    pub pinned_indices: Vec<usize>,
    pub informed_provenance: InformedProvenance,
    pub seed: u64,
}

/// Generate a full volume for `mask`, starting at fraction `p` with the
/// given informed slice and propagating bi-directionally. Each job draws
/// noise from its own derived seed, pins the overlap slices to already
/// generated content, and is conditioned on the generated boundary slice
/// (the first job uses the supplied informed slice). Output intensities are
/// clamped to [−1, 1].
#[allow(clippy::too_many_arguments)]
pub fn assemble_volume(
    predictor: &mut dyn NoisePredictor,
    mask: &MaskVolume,
    p: f64,
    informed: &Array2<f32>,
    provenance: InformedProvenance,
    mask_encoding: &MaskEncoding,
    encoder: &Encoder,
    config: &SamplerConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(Volume, Vec<AssemblyJobRecord>)> {
    config.validate()?;
    let (h, w, z) = mask.dims();
    if informed.dim() != (h, w) {
        return Err(Error::shape(
            "informed slice",
            format!("{h}x{w}"),
            format!("{}x{}", informed.dim().0, informed.dim().1),
        ));
    }
    let n = config.window_length;
    let plan = window_plan(p, n, config.overlap, z)?;
    let mut canvas = Array3::<f32>::zeros((z, h, w));
    let mut records = Vec::with_capacity(plan.jobs.len());
    for (ji, job) in plan.jobs.iter().enumerate() {
        let (informed_slice, prov) = match job.informed_from {
            None => (informed.clone(), provenance.clone()),
            Some(idx) => (
                canvas.slice(s![idx, .., ..]).to_owned(),
                InformedProvenance::Recursive { index: idx },
            ),
        };
        let cond = build_condition_stack(
            mask.data().slice(s![job.start..job.start + n, .., ..]),
            informed_slice.view(),
            mask_encoding,
            encoder,
            prov.clone(),
        )?;
        let pin = if job.pinned.is_empty() {
            None
        } else {
            let mut values = Array3::zeros((job.pinned.len(), h, w));
            for (i, &g) in job.pinned.iter().enumerate() {
                values.slice_mut(s![i, .., ..]).assign(&canvas.slice(s![g, .., ..]));
            }
            Some(PinSpec {
                positions: job.pinned.iter().map(|&g| g - job.start).collect(),
                values,
            })
        };
        let job_seed = derive_seed(seed, ji as u64);
        let window = sample_window(predictor, &cond, config, pin.as_ref(), schedule, job_seed)?;
        for g in job.generated(n) {
            canvas
                .slice_mut(s![g, .., ..])
                .assign(&window.slice(s![g - job.start, .., ..]));
        }
        records.push(AssemblyJobRecord {
            job_index: ji,
            start: job.start,
            direction: job.direction,
            pinned_indices: job.pinned.clone(),
            informed_provenance: prov,
            seed: job_seed,
        });
    }
    canvas.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok((Volume::new(canvas)?, records))
}
