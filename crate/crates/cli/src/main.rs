//! Command-line front end for mask- and informed-slice-conditioned volume
//! diffusion: dataset generation, two-stage training, sampling campaigns,
//! evaluation, and montage rendering, all driven by one JSON configuration.

mod commands;
mod config;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use volgen_core::sampler::SamplerConfig;
use volgen_core::{Error, Result};

use commands::sample::{CampaignArgs, Mode, SplitFilter};
use commands::train::TrainKind;
use config::{InformedPolicy, RunConfig};

#[derive(Parser)]
#[command(
    name = "volgen",
    version,
    about = "Conditional volume diffusion: phantom datasets, two-stage denoiser training, \
             window-autoregressive sampling, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleFlags {
    /// Disable pinning of overlap slices (ablation).
    #[arg(long)]
    no_overlap_inpaint: bool,
    /// Ignore depth-axis layers even on a volumetric checkpoint (ablation).
    #[arg(long)]
    no_volumetric: bool,
    /// Informed-slice policy: ic, ig, self, or file:PATH.
    #[arg(long)]
    informed: Option<InformedPolicy>,
    /// Augment each source mask (small rotation plus lesion translation).
    #[arg(long)]
    mask_augment: bool,
    /// Volumes to generate per source mask.
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for the campaign.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Which manifest split supplies the source masks.
    #[arg(long, value_enum, default_value_t = CliSplit::All)]
    split: CliSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliSplit {
    Train,
    Test,
    All,
}

impl From<CliSplit> for SplitFilter {
    fn from(s: CliSplit) -> SplitFilter {
        match s {
            CliSplit::Train => SplitFilter::Train,
            CliSplit::Test => SplitFilter::Test,
            CliSplit::All => SplitFilter::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural phantom dataset.
    GenData(Common),
    /// Assign train/test splits inside a dataset manifest.
    Split(Common),
    /// Train the slice stage of the window denoiser.
    TrainSlice(Common),
    /// Fine-tune the depth-axis (volumetric) layers of the denoiser.
    TrainVolume(Common),
    /// Train the position-conditioned informed-slice model.
    TrainPosmodel(Common),
    /// Generate volumes for dataset masks (informed slice defaults to self).
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Style-injecting campaign (informed slice defaults to cross-sampling).
    Enhance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Normalizing campaign: one shared informed slice for every volume.
    DeEnhance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Compare a generated dataset against its reference dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Generated dataset directory; overrides the configuration.
        #[arg(long)]
        generated: Option<PathBuf>,
    },
    /// Render a volume as an axial/coronal/sagittal PNG grid.
    Montage {
        /// Volume file to render.
        volume: PathBuf,
        /// Output PNG path.
        output: PathBuf,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::GenData(common) => commands::gen_data::run(&load_config(&common)?)?,
        Command::Split(common) => commands::split::run(&load_config(&common)?)?,
        Command::TrainSlice(common) => {
            commands::train::run(TrainKind::Slice, &load_config(&common)?)?
        }
        Command::TrainVolume(common) => {
            commands::train::run(TrainKind::Volume, &load_config(&common)?)?
        }
        Command::TrainPosmodel(common) => {
            commands::train::run(TrainKind::Posmodel, &load_config(&common)?)?
        }
        Command::Sample { common, flags } => run_campaign(Mode::Sample, &common, &flags)?,
        Command::Enhance { common, flags } => run_campaign(Mode::Enhance, &common, &flags)?,
        Command::DeEnhance { common, flags } => run_campaign(Mode::DeEnhance, &common, &flags)?,
        Command::Evaluate { common, generated } => {
            commands::evaluate::run(&load_config(&common)?, generated.as_ref())?
        }
        Command::Montage { volume, output } => commands::montage::run(&volume, &output)?,
        Command::Gradcheck { seed } => return commands::gradcheck::run(seed),
    }
    Ok(0)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run_campaign(mode: Mode, common: &Common, flags: &SampleFlags) -> Result<()> {
    let mut cfg = load_config(common)?;
    if flags.no_overlap_inpaint {
        cfg.sampler = Some(SamplerConfig { overlapped_inpainting: false, ..cfg.sampler() });
    }
    if flags.informed.is_some() || flags.mask_augment || flags.repeats.is_some() {
        let mut policy = cfg.enhance.clone().unwrap_or_else(|| mode.default_policy());
        if let Some(informed) = &flags.informed {
            policy.informed = informed.clone();
        }
        if flags.mask_augment {
            policy.mask_augment = true;
        }
        if let Some(repeats) = flags.repeats {
            policy.repeats = repeats;
        }
        cfg.enhance = Some(policy);
    }
    let args = CampaignArgs {
        mode,
        split: flags.split.into(),
        jobs: flags.jobs,
        no_volumetric: flags.no_volumetric,
    };
    commands::sample::run(&cfg, &args)
}

/// 0 success, 2 configuration error, 3 missing artifact, 4 numeric failure,
/// 5 I/O failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. }
        | Error::ShapeMismatch { .. }
        | Error::DimOverflow(_)
        | Error::EmptyInput(_)
        | Error::Json(_) => 2,
        Error::MissingArtifact(_)
        | Error::MagicMismatch { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        Error::Io { .. } => 5,
    }
}
