//! Run manifest written beside every output.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub config: FileHash,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient_hash: Option<String>,
    pub wall_time_s: f64,
}

pub fn hash_file(path: &Path) -> anyhow::Result<FileHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl Manifest {
    pub fn new(subcommand: &'static str, config: &Path, seed: Option<u64>, workers: usize) -> anyhow::Result<Self> {
        Ok(Self {
            tool: "ecozoo",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv: std::env::args().collect(),
            seed,
            workers,
            config: hash_file(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            coefficient_hash: None,
            wall_time_s: 0.0,
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    /// Hash the outputs and write `manifest.json` into `dir`.
    pub fn write(mut self, dir: &Path, outputs: &[PathBuf], started: std::time::Instant) -> anyhow::Result<()> {
        for p in outputs {
            self.outputs.push(hash_file(p)?);
        }
        self.wall_time_s = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(dir.join("manifest.json"), text).context("writing manifest.json")
    }
}
