//! Run manifests: everything needed to re-execute a command and check
//! that it reproduces its outputs byte for byte.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Invocation;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHash {
    pub file: String,
    pub sha256: String,
}

/// A seed and, where one applies, the rng stream it was used with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
    pub stream: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub config_text: Option<String>,
    /// Command line as typed, for reference.
    pub args: Vec<String>,
    pub invocation: Invocation,
    pub threads: Option<usize>,
    pub seeds: Vec<SeedRecord>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<OutputHash>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<InputHash>, CliError> {
    paths.iter().map(|p| Ok(InputHash { path: p.clone(), sha256: sha256_file(p)? })).collect()
}

/// Hashes of every regular file in `dir` except the manifest, sorted by name.
pub fn hash_outputs(dir: &Path) -> Result<Vec<OutputHash>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE || !entry.path().is_file() {
            continue;
        }
        out.push(OutputHash { sha256: sha256_file(&entry.path())?, file: name });
    }
    out.sort_by(|a, b| a.file.cmp(&b.file));
    Ok(out)
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Inputs whose current contents differ from the recorded hashes.
    pub fn changed_inputs(&self) -> Vec<String> {
        let mut out = Vec::new();
        for input in &self.inputs {
            match sha256_file(&input.path) {
                Ok(h) if h == input.sha256 => {}
                Ok(_) => out.push(format!("{}: contents changed", input.path.display())),
                Err(e) => out.push(e.to_string()),
            }
        }
        if let (Some(path), Some(text)) = (&self.config_path, &self.config_text) {
            match std::fs::read_to_string(path) {
                Ok(t) if &t == text => {}
                Ok(_) => out.push(format!("{}: config text changed", path.display())),
                Err(e) => out.push(format!("{}: {e}", path.display())),
            }
        }
        out
    }
}

/// Differences between two output listings.
pub fn compare_outputs(recorded: &[OutputHash], actual: &[OutputHash]) -> Vec<String> {
    let mut out = Vec::new();
    for r in recorded {
        match actual.iter().find(|a| a.file == r.file) {
            None => out.push(format!("{}: not produced", r.file)),
            Some(a) if a.sha256 != r.sha256 => out.push(format!("{}: sha256 differs", r.file)),
            Some(_) => {}
        }
    }
    for a in actual {
        if !recorded.iter().any(|r| r.file == a.file) {
            out.push(format!("{}: unexpected output", a.file));
        }
    }
    out
}
