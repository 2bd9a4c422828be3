//! Run configuration: one JSON file drives every subcommand; each command
//! reads only the sections it needs and rejects files with unknown keys.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use volgen_core::conditioning::MaskEncoding;
use volgen_core::model::{Stage, TrainConfig};
use volgen_core::nn::OptimizerKind;
use volgen_core::phantom::PhantomSpec;
use volgen_core::sampler::SamplerConfig;
use volgen_core::schedule::{default_schedule, ScheduleParams};
use volgen_core::{Error, Result};

/// Where the informed slice for a sampling campaign comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InformedPolicy {
    /// Cross-sampled: a random slice of a random dataset volume.
    Ic,
    /// Generated by the position-conditioned slice model.
    Ig,
    /// A random slice of the source volume itself.
    SelfSlice,
    /// A fixed slice loaded from a single-slice volume file.
    File(PathBuf),
}

impl FromStr for InformedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ic" => Ok(InformedPolicy::Ic),
            "ig" => Ok(InformedPolicy::Ig),
            "self" => Ok(InformedPolicy::SelfSlice),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(InformedPolicy::File(PathBuf::from(path))),
                _ => Err(Error::validation(
                    "informed",
                    format!("expected ic, ig, self, or file:PATH, got {s:?}"),
                )),
            },
        }
    }
}

impl fmt::Display for InformedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InformedPolicy::Ic => write!(f, "ic"),
            InformedPolicy::Ig => write!(f, "ig"),
            InformedPolicy::SelfSlice => write!(f, "self"),
            InformedPolicy::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for InformedPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InformedPolicy> for String {
    fn from(p: InformedPolicy) -> String {
        p.to_string()
    }
}

/// Checkpoint file locations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoints {
    pub denoiser: Option<PathBuf>,
    pub slice_model: Option<PathBuf>,
}

/// Denoiser architecture knobs; the mask encoding defaults to one normalized
/// channel wide enough for the configured phantom labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub base_channels: usize,
    pub emb_dim: usize,
    pub mask_encoding: Option<MaskEncoding>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { base_channels: 8, emb_dim: 16, mask_encoding: None }
    }
}

impl ModelSection {
    /// Encoding to train with: explicit if set, else one normalized channel
    /// covering background, body, organs, and lesion.
    pub fn encoding_for(&self, spec: &PhantomSpec) -> MaskEncoding {
        self.mask_encoding
            .unwrap_or(MaskEncoding::Normalized { num_labels: spec.lesion_label() })
    }
}

/// User-tunable training knobs; the stage and seed are fixed by the command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    #[serde(default = "default_batch_volumes")]
    pub batch_volumes: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn default_batch_volumes() -> usize {
    2
}

fn default_window() -> usize {
    8
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl TrainSection {
    pub fn to_core(&self, stage: Stage, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_volumes: self.batch_volumes,
            window: self.window,
            learning_rate: self.learning_rate,
            stage,
            seed,
            optimizer: self.optimizer,
            grad_clip: self.grad_clip,
        }
    }
}

/// How a sampling campaign resolves its conditioning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancePolicy {
    pub informed: InformedPolicy,
    pub mask_augment: bool,
    pub repeats: usize,
}

impl Default for EnhancePolicy {
    fn default() -> Self {
        EnhancePolicy { informed: InformedPolicy::Ic, mask_augment: false, repeats: 1 }
    }
}

impl EnhancePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::validation("repeats", "must be at least 1"));
        }
        Ok(())
    }
}

/// The full run configuration. Every field is optional at parse time; each
/// command demands the sections it consumes via [`RunConfig::require`]-style
/// accessors so one file can drive a whole pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Source dataset directory (contains manifest.json).
    pub dataset: Option<PathBuf>,
    /// Generated dataset directory, for evaluation.
    pub generated: Option<PathBuf>,
    /// Output directory for sampling campaigns and reports.
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checkpoints: Checkpoints,
    pub schedule: Option<ScheduleParams>,
    pub phantom: Option<PhantomSpec>,
    /// Phantom count for gen-data.
    pub count: Option<usize>,
    /// Train fraction for split.
    pub train_fraction: Option<f64>,
    pub model: ModelSection,
    pub train_slice: Option<TrainSection>,
    pub train_volume: Option<TrainSection>,
    pub train_posmodel: Option<TrainSection>,
    pub sampler: Option<SamplerConfig>,
    pub enhance: Option<EnhancePolicy>,
    /// Seed of the fixed random feature projector used by evaluate.
    pub projector_seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn phantom(&self) -> PhantomSpec {
        self.phantom.clone().unwrap_or_default()
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        self.schedule.clone().unwrap_or_else(|| default_schedule().params())
    }

    pub fn sampler(&self) -> SamplerConfig {
        self.sampler.clone().unwrap_or_default()
    }

    pub fn dataset_dir(&self) -> Result<&PathBuf> {
        require(&self.dataset, "dataset")
    }

    pub fn out_dir(&self) -> Result<&PathBuf> {
        require(&self.out_dir, "out_dir")
    }

    pub fn denoiser_path(&self) -> Result<&PathBuf> {
        require(&self.checkpoints.denoiser, "checkpoints.denoiser")
    }

    pub fn slice_model_path(&self) -> Result<&PathBuf> {
        require(&self.checkpoints.slice_model, "checkpoints.slice_model")
    }
}

/// Demand a configuration field a command cannot run without.
pub fn require<'a, T>(opt: &'a Option<T>, name: &'static str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::validation(name, "required by this command but absent from the configuration"))
}
