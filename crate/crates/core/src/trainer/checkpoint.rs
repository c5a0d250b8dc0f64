//! Per-episode parameter snapshots.
//!
//! On disk each snapshot is one file:
//!
//! ```text
//! b"CYCD"                      magic
//! u32 LE                       format version
//! u32 LE + UTF-8 bytes         selector name
//! u64 LE                       element count
//! f32 LE * count               values
//! ```
//!
//! and the directory carries a `store.json` sidecar ([`StoreMeta`]).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::FlatVector;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CYCD";
pub const CHECKPOINT_VERSION: u32 = 1;
const SIDECAR: &str = "store.json";

/// Sidecar metadata of a stored snapshot series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub selector: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub format_version: u32,
    pub episodes: Vec<usize>,
    pub permutations: Vec<Vec<usize>>,
    pub config: serde_json::Value,
}

/// Ordered, element-aligned snapshots of one selector, held as f32.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointStore {
    selector: String,
    episodes: Vec<usize>,
    snapshots: Vec<Vec<f32>>,
}

impl CheckpointStore {
    pub fn new(selector: impl Into<String>) -> Self {
        Self {
            selector: selector.into(),
            episodes: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn selector(&self) -> &str {
        &self.selector
    }

    pub fn episodes(&self) -> &[usize] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn push(&mut self, episode: usize, values: &FlatVector) -> Result<()> {
        if let Some(first) = self.snapshots.first() {
            if first.len() != values.len() {
                return Err(Error::Store(format!(
                    "snapshot of {} values does not align with {}",
                    values.len(),
                    first.len()
                )));
            }
        }
        self.episodes.push(episode);
        self.snapshots.push(values.values.iter().map(|&v| v as f32).collect());
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<FlatVector> {
        self.snapshots
            .get(i)
            .map(|s| FlatVector::new(s.iter().map(|&v| f64::from(v)).collect(), self.selector.clone()))
    }

    pub fn to_vectors(&self) -> Vec<FlatVector> {
        (0..self.len()).filter_map(|i| self.get(i)).collect()
    }

    /// SHA-256 over selector, episode indices and every stored value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.selector.as_bytes());
        for (e, s) in self.episodes.iter().zip(&self.snapshots) {
            h.update((*e as u64).to_le_bytes());
            for v in s {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes one file per snapshot plus the sidecar. `meta.selector`,
    /// `meta.episodes` and `meta.format_version` are filled in from the store.
    pub fn save(&self, dir: &Path, mut meta: StoreMeta) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (e, s) in self.episodes.iter().zip(&self.snapshots) {
            write_snapshot_file(&dir.join(snapshot_name(*e)), &self.selector, s)?;
        }
        meta.selector = self.selector.clone();
        meta.episodes = self.episodes.clone();
        meta.format_version = CHECKPOINT_VERSION;
        fs::write(dir.join(SIDECAR), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, StoreMeta)> {
        let sidecar = dir.join(SIDECAR);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::Store(format!("{}: {e}", sidecar.display())))?;
        let meta: StoreMeta = serde_json::from_str(&text)?;
        let mut store = Self::new(meta.selector.clone());
        for &e in &meta.episodes {
            let path = dir.join(snapshot_name(e));
            let (name, values) = read_snapshot_file(&path)?;
            if name != meta.selector {
                return Err(Error::Store(format!(
                    "{} holds selector `{name}`, sidecar says `{}`",
                    path.display(),
                    meta.selector
                )));
            }
            if let Some(first) = store.snapshots.first() {
                if first.len() != values.len() {
                    return Err(Error::Store(format!("{} is not aligned with episode 0", path.display())));
                }
            }
            store.episodes.push(e);
            store.snapshots.push(values);
        }
        Ok((store, meta))
    }
}

fn snapshot_name(episode: usize) -> String {
    format!("episode_{episode:05}.cycd")
}

pub fn write_snapshot_file(path: &Path, selector: &str, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + selector.len() + 4 * values.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(selector.len() as u32).to_le_bytes());
    buf.extend_from_slice(selector.as_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot file, returning `(selector name, values)`.
pub fn read_snapshot_file(path: &Path) -> Result<(String, Vec<f32>)> {
    let corrupt = |m: &str| Error::Store(format!("{}: {m}", path.display()));
    let mut f = fs::File::open(path).map_err(|e| Error::Store(format!("{}: {e}", path.display())))?;
    let mut head = [0u8; 8];
    f.read_exact(&mut head).map_err(|_| corrupt("truncated header"))?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4).map_err(|_| corrupt("truncated selector length"))?;
    let mut name = vec![0u8; u32::from_le_bytes(len4) as usize];
    f.read_exact(&mut name).map_err(|_| corrupt("truncated selector"))?;
    let name = String::from_utf8(name).map_err(|_| corrupt("selector is not UTF-8"))?;
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8).map_err(|_| corrupt("truncated element count"))?;
    let count = u64::from_le_bytes(len8) as usize;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != 4 * count {
        return Err(corrupt(&format!("expected {count} values, found {} bytes", raw.len())));
    }
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((name, values))
}
