//! Run manifests written next to every artifact as `<artifact>.manifest.json`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let data = std::fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// SHA-256 of the effective configuration as compact JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u128,
    pub wall_clock_seconds: f64,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Collects what a subcommand read and wrote, then writes the manifest.
pub struct Recorder {
    subcommand: String,
    started: Instant,
    started_unix_ms: u128,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(subcommand: &str) -> Self {
        Recorder {
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serializes");
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes one manifest next to `outputs[0]` listing every output.
    pub fn finish(self, outputs: &[&Path]) -> Result<PathBuf, CliError> {
        let Some(first) = outputs.first() else {
            return Err(CliError::Usage("manifest needs at least one output".into()));
        };
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            subcommand: self.subcommand,
            config_hash: config_hash(&self.config),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            started_unix_ms: self.started_unix_ms,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(first);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
        Ok(path)
    }
}
