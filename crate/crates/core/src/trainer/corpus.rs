use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{LmExample, PAD};
use crate::seeded_rng;

/// Symbols of the synthetic Markov source; symbol `s` is byte `b'0' + s`.
pub const SYNTHETIC_ALPHABET: usize = 64;
const SYNTHETIC_BASE: usize = b'0' as usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Seeded order-1 Markov chain text.
    Synthetic,
    /// Directory of text files; `T` of them are sampled.
    TextDir { path: PathBuf },
}

/// One byte-tokenized document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: usize,
    /// Full retained content (no padding), kept for window shifting.
    pub tokens: Vec<usize>,
    /// The canonical first-`C` window, PAD-extended.
    pub window: Vec<usize>,
    pub source: String,
}

impl Document {
    pub fn new(id: usize, tokens: Vec<usize>, context: usize, source: impl Into<String>) -> Self {
        let mut window: Vec<usize> = tokens.iter().copied().take(context).collect();
        window.resize(context, PAD);
        Self {
            id,
            tokens,
            window,
            source: source.into(),
        }
    }

    /// Canonical evaluation example: first `C` tokens, no masking.
    pub fn canonical_example(&self) -> LmExample {
        LmExample::next_token(&self.window)
    }

    pub fn content_len(&self) -> usize {
        self.window.iter().filter(|&&t| t != PAD).count()
    }
}

/// Builds `T` documents of context `C`.
pub fn build_corpus(source: &CorpusSource, tasks: usize, context: usize, seed: u64) -> Result<Vec<Document>> {
    match source {
        CorpusSource::Synthetic => Ok(synthetic(tasks, context, seed)),
        CorpusSource::TextDir { path } => from_dir(path, tasks, context, seed),
    }
}

fn synthetic(tasks: usize, context: usize, seed: u64) -> Vec<Document> {
    let mut rng = seeded_rng(seed);
    let a = SYNTHETIC_ALPHABET;
    let mut cumulative = vec![0.0; a * a];
    for row in cumulative.chunks_exact_mut(a) {
        let mut acc = 0.0;
        for c in row.iter_mut() {
            acc += rng.random::<f64>();
            *c = acc;
        }
        let total = acc;
        row.iter_mut().for_each(|c| *c /= total);
    }
    (0..tasks)
        .map(|id| {
            let mut s = rng.random_range(0..a);
            let tokens = (0..4 * context)
                .map(|_| {
                    let tok = SYNTHETIC_BASE + s;
                    let u: f64 = rng.random();
                    let row = &cumulative[s * a..(s + 1) * a];
                    s = row.iter().position(|&c| u < c).unwrap_or(a - 1);
                    tok
                })
                .collect();
            Document::new(id, tokens, context, "synthetic")
        })
        .collect()
}

fn from_dir(path: &Path, tasks: usize, context: usize, seed: u64) -> Result<Vec<Document>> {
    let entries = fs::read_dir(path).map_err(|e| Error::Ingestion(format!("cannot read directory {}: {e}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let meta = entry
            .metadata()
            .map_err(|e| Error::Ingestion(format!("{}: {e}", entry.path().display())))?;
        // A document needs at least one next-token target.
        if meta.is_file() && meta.len() >= 2 {
            files.push(entry.path());
        }
    }
    files.sort();
    if files.len() < tasks {
        return Err(Error::Ingestion(format!(
            "{} holds {} usable files, {tasks} required",
            path.display(),
            files.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    index::sample(&mut rng, files.len(), tasks)
        .into_iter()
        .enumerate()
        .map(|(id, i)| {
            let file = &files[i];
            let bytes = fs::read(file).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", file.display())))?;
            let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(Document::new(id, bytes.into_iter().map(usize::from).collect(), context, name))
        })
        .collect()
}

/// SHA-256 over every document's retained tokens.
pub fn corpus_hash(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update((d.tokens.len() as u64).to_le_bytes());
        for &t in &d.tokens {
            h.update((t as u16).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
