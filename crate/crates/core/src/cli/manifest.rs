//! Per-stage run manifests and content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;
use crate::numkernel::checkpoint::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: u32,
    pub crate_version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Paths relative to the output root, mapped to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub metrics: serde_json::Value,
}

impl RunManifest {
    pub fn read(stage_dir: &Path) -> Result<Self, CliError> {
        let path = stage_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, stage_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&stage_dir.join(MANIFEST_FILE), text.as_bytes()).map_err(|e| CliError::Runtime(e.to_string()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes every file under `root/stage` except its manifest, keyed by the
/// path relative to `root` with forward slashes.
pub fn hash_stage(root: &Path, stage: &str) -> Result<BTreeMap<String, String>, CliError> {
    let dir = root.join(stage);
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(&dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let f = entry.path();
        let rel = f.strip_prefix(root).expect("walked under root");
        if rel == Path::new(stage).join(MANIFEST_FILE) {
            continue;
        }
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.insert(key, sha256_file(f)?);
    }
    Ok(out)
}

/// One digest over a set of file hashes.
pub fn combined_hash(hashes: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in hashes {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}
