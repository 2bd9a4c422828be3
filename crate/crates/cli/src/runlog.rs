//! Run manifests: every command that writes artifacts also writes a
//! `run-<command>.json` describing what it consumed (by content hash) and
//! what it produced, so any file on disk can be traced back to its run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use volgen_core::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// The configuration after CLI-flag overrides, as written JSON.
    pub config: serde_json::Value,
    /// Consumed file → SHA-256 of its content at run start.
    pub input_hashes: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub wall_time_secs: f64,
    /// Generated volume id → relative path of its assembly log.
    pub assembly_logs: BTreeMap<String, String>,
    #[serde(skip, default = "Instant::now")]
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            input_hashes: BTreeMap::new(),
            output_paths: Vec::new(),
            wall_time_secs: 0.0,
            assembly_logs: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    /// Record a consumed file by content hash.
    pub fn hash_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
        self.input_hashes
            .insert(path.display().to_string(), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    pub fn record_output(&mut self, path: impl AsRef<Path>) {
        self.output_paths.push(path.as_ref().display().to_string());
    }

    /// Finish the run: stamp the wall time and write `run-<command>.json`
    /// into `dir` atomically (write to a temp file, then rename).
    pub fn write(mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.wall_time_secs = self.started.elapsed().as_secs_f64();
        let final_path = dir.join(format!("run-{}.json", self.command));
        self.record_output(&final_path);
        let tmp = dir.join(format!(".run-{}.json.tmp", self.command));
        let json = serde_json::to_vec_pretty(&self)?;
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
        Ok(())
    }
}

/// Error with exit code 3 when a required input file is absent, so missing
/// checkpoints and datasets fail with a pointer to the producing command.
pub fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(format!("{} ({hint})", path.display())))
    }
}
