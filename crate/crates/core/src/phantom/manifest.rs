//! Dataset manifest: the `manifest.json` index of a generated phantom corpus.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{child_rng, derive_seed};

use super::{generate_phantom, write_mask, write_volume, PatientStyle, PhantomSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Volume file path, relative to the dataset directory.
    pub volume: String,
    /// Mask file path, relative to the dataset directory.
    pub mask: String,
    /// Slice count Z of this entry.
    pub z: u32,
    pub split: Split,
    pub style: PatientStyle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(rename = "N")]
    pub n: usize,
    pub entries: Vec<ManifestEntry>,
    /// Directory holding manifest.json and the referenced files. Set on
    /// load/save, not serialized.
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    /// Manifest over `entries`, rooted at the current directory until saved.
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { n: entries.len(), entries, root: PathBuf::from(".") }
    }

    /// Read and validate `dir/manifest.json`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(Self::FILE_NAME);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_slice(&bytes)?;
        m.root = dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    /// Write `dir/manifest.json` and remember `dir` as the root.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.root = dir.to_path_buf();
        let path = dir.join(Self::FILE_NAME);
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Entry-count, id-uniqueness, and path-resolvability checks.
    pub fn validate(&self) -> Result<()> {
        if self.n != self.entries.len() {
            return Err(Error::validation(
                "N",
                format!("declares {} entries, found {}", self.n, self.entries.len()),
            ));
        }
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("id", "duplicate entry ids".to_string()));
        }
        for e in &self.entries {
            for rel in [&e.volume, &e.mask] {
                let p = self.root.join(rel);
                if !p.is_file() {
                    return Err(Error::MissingArtifact(p.display().to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn volume_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.volume)
    }

    pub fn mask_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.mask)
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Generate `count` phantoms into `dir` and persist the manifest. Every entry
/// starts in the train split; run [`split_dataset`] to assign a holdout.
pub fn generate_dataset(
    spec: &PhantomSpec,
    count: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if count < 2 {
        return Err(Error::validation("count", format!("need >= 2, got {count}")));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (vol, mask, style) = generate_phantom(spec, derive_seed(seed, i as u64))?;
        let id = format!("ph{i:04}");
        let volume_rel = format!("{id}.vol");
        let mask_rel = format!("{id}.msk");
        write_volume(dir.join(&volume_rel), &vol)?;
        write_mask(dir.join(&mask_rel), &mask)?;
        entries.push(ManifestEntry {
            id,
            volume: volume_rel,
            mask: mask_rel,
            z: vol.depth() as u32,
            split: Split::Train,
            style,
        });
    }
    let mut m = DatasetManifest {
        n: count,
        entries,
        root: dir.to_path_buf(),
    };
    m.save(dir)?;
    Ok(m)
}

/// RNG stream tag reserved for split shuffles.
const SPLIT_STREAM_TAG: u64 = 0x53504c49;

/// Assign ⌊N·train_fraction⌋ entries to the train split and the rest to test,
/// by seeded shuffle. Deterministic in (manifest order, seed).
pub fn split_dataset(manifest: &mut DatasetManifest, train_fraction: f64, seed: u64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(
            "train_fraction",
            format!("need within (0,1), got {train_fraction}"),
        ));
    }
    let n = manifest.entries.len();
    if n < 2 {
        return Err(Error::validation("N", format!("need >= 2 entries to split, got {n}")));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut child_rng(seed, SPLIT_STREAM_TAG));
    for (rank, &i) in order.iter().enumerate() {
        manifest.entries[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(())
}
