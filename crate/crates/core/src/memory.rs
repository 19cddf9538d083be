//! Per-agent vector memory with relevance + recency retrieval.
//!
//! Every message an agent sees or produces is appended to its own memory
//! stream with a monotone sequence number, embedded into a deterministic
//! 64-dimensional vector. Retrieval combines the `n_relevant` entries
//! closest (cosine) to a query with the `k_latest` most recent entries:
//! relevance hits come first (most similar first), then the recency block
//! in chronological order, deduplicated, so the result never exceeds
//! `n_relevant + k_latest` entries.
//!
//! The embedding is feature hashing: lowercased alphanumeric tokens are
//! FNV-1a-hashed into 64 buckets, counted, and L2-normalized. No model in
//! the loop and no platform-dependent hashing, so runs replay bit-exactly.
//!
//! Entries persist to `memory/<agent>.jsonl` (one `{"seq","text","vec"}`
//! object per line); reopening a store restores retrieval behaviour.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Embedding dimensionality.
pub const EMBED_DIM: usize = 64;

/// One remembered message.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MemoryEntry {
    /// Position in the owning agent's stream; monotone per agent.
    pub seq: u64,
    pub text: String,
    pub vec: Vec<f32>,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt memory file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

/// Embed text into a unit-norm (or zero) 64-dimensional vector.
pub fn embed(text: &str) -> Vec<f32> {
    let mut counts = [0f32; EMBED_DIM];
    for token in tokens(text) {
        counts[(fnv1a(token.as_bytes()) % EMBED_DIM as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f32>().sqrt();
    if norm > 0.0 {
        for c in counts.iter_mut() {
            *c /= norm;
        }
    }
    counts.to_vec()
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// All agents' memory streams, persisted under one directory.
pub struct MemoryStore {
    root: PathBuf,
    inner: Mutex<HashMap<String, Vec<MemoryEntry>>>,
}

impl MemoryStore {
    /// Open (or create) a store rooted at `root`; existing streams are
    /// reloaded from their JSONL files.
    pub fn open(root: &Path) -> Result<Self, MemoryError> {
        fs::create_dir_all(root).map_err(|e| MemoryError::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        let mut streams: HashMap<String, Vec<MemoryEntry>> = HashMap::new();
        for entry in fs::read_dir(root).map_err(|e| MemoryError::Io {
            path: root.to_path_buf(),
            source: e,
        })? {
            let entry = entry.map_err(|e| MemoryError::Io {
                path: root.to_path_buf(),
                source: e,
            })?;
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(agent) = name.strip_suffix(".jsonl") else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| MemoryError::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut entries = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                let parsed: MemoryEntry =
                    serde_json::from_str(line).map_err(|e| MemoryError::Corrupt {
                        path: path.clone(),
                        reason: format!("line {}: {e}", idx + 1),
                    })?;
                entries.push(parsed);
            }
            streams.insert(agent.to_string(), entries);
        }
        Ok(MemoryStore {
            root: root.to_path_buf(),
            inner: Mutex::new(streams),
        })
    }

    /// Append one message to an agent's stream. Returns its sequence number.
    pub fn append(&self, agent: &str, text: &str) -> Result<u64, MemoryError> {
        let mut inner = self.inner.lock();
        let stream = inner.entry(agent.to_string()).or_default();
        let seq = stream.last().map(|e| e.seq + 1).unwrap_or(0);
        let entry = MemoryEntry {
            seq,
            text: text.to_string(),
            vec: embed(text),
        };
        let path = self.root.join(format!("{agent}.jsonl"));
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| MemoryError::Io {
                path: path.clone(),
                source: e,
            })?;
        writeln!(
            file,
            "{}",
            serde_json::to_string(&entry).expect("memory entry serializes")
        )
        .map_err(|e| MemoryError::Io { path, source: e })?;
        stream.push(entry);
        Ok(seq)
    }

    /// Number of entries in an agent's stream.
    pub fn len(&self, agent: &str) -> usize {
        self.inner.lock().get(agent).map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self, agent: &str) -> bool {
        self.len(agent) == 0
    }

    /// Retrieve `n_relevant` nearest entries to `query` (most similar first,
    /// similarity ties broken toward newer entries) followed by the
    /// `k_latest` most recent entries in chronological order, without
    /// duplicates.
    pub fn retrieve(
        &self,
        agent: &str,
        query: &str,
        n_relevant: usize,
        k_latest: usize,
    ) -> Vec<MemoryEntry> {
        let inner = self.inner.lock();
        let Some(stream) = inner.get(agent) else {
            return Vec::new();
        };
        let qvec = embed(query);
        let mut scored: Vec<(f32, &MemoryEntry)> =
            stream.iter().map(|e| (cosine(&qvec, &e.vec), e)).collect();
        // stable order: similarity desc, then newer (higher seq) first
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.1.seq.cmp(&a.1.seq))
        });
        let mut result: Vec<MemoryEntry> = Vec::new();
        for (_, entry) in scored.iter().take(n_relevant) {
            result.push((*entry).clone());
        }
        let tail_start = stream.len().saturating_sub(k_latest);
        for entry in &stream[tail_start..] {
            if !result.iter().any(|e| e.seq == entry.seq) {
                result.push(entry.clone());
            }
        }
        result
    }
}
