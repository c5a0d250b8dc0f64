use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliResult, Failure};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Transformer,
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    /// Relative to the run directory.
    pub dir: String,
    pub corpus_hash: Option<String>,
    pub seconds: f64,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub code_version: String,
    pub config_hash: String,
    /// The resolved configuration; loading it back reproduces the run.
    pub config: serde_json::Value,
    pub seeds: Vec<SeedEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical (compact, key-sorted) JSON form.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Failure::io(tmp.display(), e))?;
    fs::rename(&tmp, path).map_err(|e| Failure::io(path.display(), e))
}

impl RunManifest {
    pub fn save(&self, run_dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&run_dir.join(MANIFEST), text.as_bytes())
    }

    pub fn load(run_dir: &Path) -> CliResult<Self> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Failure::missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::malformed(format!("{}: {e}", path.display())))
    }
}
