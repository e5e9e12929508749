//! Output bookkeeping: checksummed files and the run manifest.

use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;

/// One file written by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputEntry {
    /// Path relative to the output directory.
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Collects outputs in one directory, hashing each as it is written.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Renders into memory, then writes and records the file.
    pub fn write_with<F>(&mut self, name: &str, render: F) -> io::Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything needed to reproduce a run and to check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub preset: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Parameters computed from the config, such as Ω0 per pulse length.
    pub derived: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
    pub wall_time_s: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(
        preset: &str,
        config: &ExperimentConfig,
        derived: serde_json::Value,
        outputs: &OutputSet,
        wall_time: Duration,
    ) -> Self {
        Self {
            preset: preset.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.sim.seed,
            config: config.clone(),
            derived,
            outputs: outputs.entries().to_vec(),
            wall_time_s: wall_time.as_secs_f64(),
        }
    }

    /// Written after every output, so its presence marks a complete run.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
