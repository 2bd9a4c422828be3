//! Model persistence.
//!
//! File layout: magic `GEMV`, format version u32 LE, metadata length u64 LE
//! followed by that many bytes of UTF-8 JSON, then one record per parameter
//! in visitor order — name length u32 LE, name bytes, rank u32 LE, dims
//! u32 LE × rank, float32 LE payload. Visitor order is deterministic, so
//! save → load → save reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{DenoiserModel, Descriptor, SliceModel, Stage, UNet};
use crate::conditioning::{Encoder, MaskEncoding};
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::schedule::ScheduleParams;
use crate::seeds::rng_from_seed;

const MAGIC: [u8; 4] = *b"GEMV";
const VERSION: u32 = 1;

/// What kind of model a checkpoint holds, with kind-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ModelKind {
    Denoiser {
        stage: Stage,
        mask_encoding: MaskEncoding,
        encoder: Encoder,
    },
    SliceModel,
}

/// JSON metadata block of a checkpoint. (No `deny_unknown_fields`: serde
/// cannot combine it with the flattened kind tag.)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub descriptor: Descriptor,
    pub schedule: ScheduleParams,
    pub training_step: u64,
    pub seed: u64,
}

pub fn save_denoiser(
    path: impl AsRef<Path>,
    model: &mut DenoiserModel,
    schedule: &ScheduleParams,
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::Denoiser {
            stage: model.stage(),
            mask_encoding: *model.mask_encoding(),
            encoder: *model.encoder(),
        },
        descriptor: model.descriptor().clone(),
        schedule: schedule.clone(),
        training_step: model.training_step(),
        seed,
    };
    write_file(path.as_ref(), &meta, model.unet_mut())
}

pub fn load_denoiser(path: impl AsRef<Path>) -> Result<(DenoiserModel, CheckpointMeta)> {
    let (meta, records) = read_file(path.as_ref())?;
    let ModelKind::Denoiser { stage, mask_encoding, encoder } = meta.kind else {
        return Err(Error::validation("checkpoint", "expected a denoiser checkpoint"));
    };
    let mut unet = UNet::new(&meta.descriptor, &mut rng_from_seed(0))?;
    restore_params(&mut unet, records)?;
    let model = DenoiserModel {
        unet,
        mask_encoding,
        encoder,
        stage,
        training_step: meta.training_step,
    };
    Ok((model, meta))
}

pub fn save_slice_model(
    path: impl AsRef<Path>,
    model: &mut SliceModel,
    schedule: &ScheduleParams,
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::SliceModel,
        descriptor: model.descriptor().clone(),
        schedule: schedule.clone(),
        training_step: model.training_step(),
        seed,
    };
    write_file(path.as_ref(), &meta, model.unet_mut())
}

pub fn load_slice_model(path: impl AsRef<Path>) -> Result<(SliceModel, CheckpointMeta)> {
    let (meta, records) = read_file(path.as_ref())?;
    if meta.kind != ModelKind::SliceModel {
        return Err(Error::validation("checkpoint", "expected a slice-model checkpoint"));
    }
    let mut unet = UNet::new(&meta.descriptor, &mut rng_from_seed(0))?;
    restore_params(&mut unet, records)?;
    Ok((
        SliceModel {
            unet,
            training_step: meta.training_step,
        },
        meta,
    ))
}

fn write_file(path: &Path, meta: &CheckpointMeta, body: &mut UNet<f32>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    body.visit_params("", &mut |name, p, _| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.ndim() as u32).to_le_bytes());
        for &d in p.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.at + len > self.bytes.len() {
            return Err(Error::Truncated {
                expected: (self.at + len) as u64,
                got: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.at..self.at + len];
        self.at += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

fn read_file(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, ArrayD<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, at: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::MagicMismatch {
            expected: MAGIC,
            found: magic.try_into().expect("4 bytes"),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { supported: VERSION, found: version });
    }
    let meta_len = cur.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)?;
    let mut records = BTreeMap::new();
    while !cur.done() {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::validation("checkpoint", "parameter name is not UTF-8"))?;
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let payload = cur.take(len * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(&bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation("checkpoint", format!("parameter {name} holds non-finite value {bad}")));
        }
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), data).expect("len = product of dims");
        if records.insert(name.clone(), arr).is_some() {
            return Err(Error::validation("checkpoint", format!("duplicate parameter record {name}")));
        }
    }
    Ok((meta, records))
}

fn restore_params(body: &mut UNet<f32>, mut records: BTreeMap<String, ArrayD<f32>>) -> Result<()> {
    let mut err = None;
    body.visit_params("", &mut |name, mut p, _| {
        if err.is_some() {
            return;
        }
        match records.remove(name) {
            None => err = Some(Error::validation("checkpoint", format!("missing parameter record {name}"))),
            Some(arr) if arr.shape() != p.shape() => {
                err = Some(Error::shape(
                    "checkpoint parameter",
                    format!("{name} {:?}", p.shape()),
                    format!("{name} {:?}", arr.shape()),
                ));
            }
            Some(arr) => p.assign(&arr),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = records.into_keys().next() {
        return Err(Error::validation("checkpoint", format!("unknown parameter record {name}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::schedule::default_schedule;
    use ndarray::Array3;

    fn perturbed_denoiser() -> DenoiserModel {
        let mut m = DenoiserModel::init(4, 8, MaskEncoding::Normalized { num_labels: 5 }, Encoder::Identity, 7).unwrap();
        // Nudge the zero-initialized tensors so round trips exercise real values.
        m.unet_mut().visit_params("", &mut |_, mut p, _| {
            for (i, v) in p.iter_mut().enumerate() {
                *v += 1e-3 * ((i % 13) as f32 - 6.0);
            }
        });
        m.set_training_step(42);
        m.set_stage(Stage::Volumetric);
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let sched = default_schedule().params();
        let mut m = perturbed_denoiser();
        save_denoiser(&p1, &mut m, &sched, 99).unwrap();
        let (mut loaded, meta) = load_denoiser(&p1).unwrap();
        assert_eq!(meta.training_step, 42);
        assert_eq!(meta.seed, 99);
        assert!(matches!(meta.kind, ModelKind::Denoiser { stage: Stage::Volumetric, .. }));
        save_denoiser(&p2, &mut loaded, &sched, 99).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn predictions_survive_round_trip() {
        use crate::conditioning::{build_condition_stack, InformedProvenance};
        use crate::phantom::{generate_phantom, PhantomSpec};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let sched = default_schedule().params();
        let mut m = perturbed_denoiser();
        let (v, mask, _) = generate_phantom(&PhantomSpec::default(), 1).unwrap();
        let noisy = v.data().slice(ndarray::s![0..4, .., ..]).to_owned();
        let cond = build_condition_stack(
            mask.data().slice(ndarray::s![0..4, .., ..]),
            v.slice(2),
            m.mask_encoding(),
            m.encoder(),
            InformedProvenance::Volume { id: "t".into(), index: 2 },
        )
        .unwrap();
        let before = m.predict_noise(&noisy, &cond, 321, true).unwrap();
        save_denoiser(&path, &mut m, &sched, 1).unwrap();
        let (mut loaded, _) = load_denoiser(&path).unwrap();
        let after = loaded.predict_noise(&noisy, &cond, 321, true).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn slice_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let sched = default_schedule().params();
        let mut m = SliceModel::init(4, 8, 3).unwrap();
        m.set_training_step(17);
        save_slice_model(&path, &mut m, &sched, 5).unwrap();
        let (mut loaded, meta) = load_slice_model(&path).unwrap();
        assert_eq!(meta.kind, ModelKind::SliceModel);
        assert_eq!(loaded.training_step(), 17);
        let x = Array3::zeros((1, 16, 16));
        let a = m.predict_noise(&x, &[5], &[0.5]).unwrap();
        let b = loaded.predict_noise(&x, &[5], &[0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let sched = default_schedule().params();
        save_denoiser(&path, &mut perturbed_denoiser(), &sched, 1).unwrap();
        assert!(load_slice_model(&path).is_err());
    }

    #[test]
    fn header_layout_is_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let sched = default_schedule().params();
        save_denoiser(&path, &mut perturbed_denoiser(), &sched, 1).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"GEMV");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
        assert_eq!(meta["model"], "denoiser");
        assert_eq!(meta["schedule"]["T"], 1000);
    }

    #[test]
    fn corrupt_files_yield_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let sched = default_schedule().params();
        save_denoiser(&path, &mut perturbed_denoiser(), &sched, 1).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut magic = bytes.clone();
        magic[0] = b'X';
        fs::write(&path, &magic).unwrap();
        assert!(matches!(load_denoiser(&path), Err(Error::MagicMismatch { .. })));

        let mut version = bytes.clone();
        version[4] = 9;
        fs::write(&path, &version).unwrap();
        assert!(matches!(
            load_denoiser(&path),
            Err(Error::VersionMismatch { supported: 1, found: 9 })
        ));

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_denoiser(&path), Err(Error::Truncated { .. })));
    }
}
