//! Run manifests: a `<out>.run.json` sidecar recording what produced an output.

use std::path::{Path, PathBuf};

use netexp_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    fn new(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(bytes)),
        }
    }
}

/// Reads a whole file, naming it in the error.
pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// The fully resolved flags.
    pub config: serde_json::Value,
    /// SHA-256 of `config` serialized compactly.
    pub config_digest: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    started_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Recorder {
    pub fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command,
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
        })
    }

    /// Reads and digests an input file.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read(path)?;
        self.inputs.push(FileDigest::new(path, &bytes));
        Ok(bytes)
    }

    /// Records flags or configuration resolved after parsing, such as
    /// defaults taken from input files.
    pub fn resolved(&mut self, value: &impl Serialize) -> Result<()> {
        let flags = std::mem::take(&mut self.config);
        self.config = serde_json::json!({ "flags": flags, "resolved": serde_json::to_value(value)? });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest next to `primary` and returns its path.
    pub fn finish(self, primary: &Path) -> Result<PathBuf> {
        let config_digest = hex(&Sha256::digest(serde_json::to_vec(&self.config)?));
        let outputs = self
            .outputs
            .iter()
            .map(|p| Ok(FileDigest::new(p, &read(p)?)))
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            config_digest,
            inputs: self.inputs,
            outputs,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = run_path(primary);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

/// `report.json` → `report.json.run.json`.
pub fn run_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".run.json");
    PathBuf::from(s)
}
