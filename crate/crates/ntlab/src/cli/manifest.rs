//! Run manifests: every command records what it read, what it wrote
//! (by content hash), the resolved settings, and the seed, so a run
//! can be audited and reproduced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub deterministic: bool,
    pub workers: usize,
    /// The fully resolved settings the command actually ran with.
    pub config: serde_json::Value,
    /// Input artifacts by path, value = sha256 of content.
    pub inputs: BTreeMap<String, String>,
    /// Output artifacts by path, value = sha256 of content.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

/// Accumulates a manifest while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, deterministic: bool, workers: usize) -> Self {
        Self {
            manifest: RunManifest {
                tool: "ntlab".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                seed,
                deterministic,
                workers,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_time_s: 0.0,
            },
            started: Instant::now(),
        }
    }

    /// Record the resolved settings snapshot.
    pub fn config<T: Serialize>(&mut self, settings: &T) -> Result<()> {
        self.manifest.config = serde_json::to_value(settings)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)
            .map_err(|e| Error::Format(format!("hashing input {}: {e}", path.display())))?;
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)
            .map_err(|e| Error::Format(format!("hashing output {}: {e}", path.display())))?;
        self.manifest
            .outputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Finalize and write the manifest JSON; returns the finished record.
    pub fn write(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| Error::Format(format!("writing manifest {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}

/// Default manifest location: next to the primary output, with the
/// extension replaced by `.run.json` appended to the full name.
pub fn manifest_path_for(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    name.push_str(".run.json");
    primary_output.with_file_name(name)
}
