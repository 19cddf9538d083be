//! Shared versioned workspace with optimistic concurrency.
//!
//! Each path carries its own linear commit chain. A read hands back the
//! content together with the commit hash, and that hash is the caller's
//! write ticket: a write is accepted only if its base ticket still equals
//! the path's HEAD, otherwise the writer gets a [`ConflictReport`] carrying
//! both versions and must merge and retry. There is no automatic merging.
//!
//! Writes across all paths are serialized by one lock, so the run has a
//! single global write order and per-path chains never fork.
//!
//! On-disk layout under the workspace root:
//!
//! ```text
//! objects/<hash>      commit record (path, parent, content, author, seq)
//! refs/<escaped-path> current HEAD hash for the path
//! files/<path>        materialized current content (what subprocesses see)
//! log.jsonl           append-only audit log of commits
//! ```

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// 64-character lowercase hex digest identifying one commit.
pub type CommitHash = String;

/// Compute the commit digest: SHA-256 over the path, the parent hash
/// (empty string for a root commit) and the content, null-separated.
pub fn commit_digest(path: &str, parent: Option<&str>, content: &str) -> CommitHash {
    let mut hasher = Sha256::new();
    hasher.update(path.as_bytes());
    hasher.update([0u8]);
    hasher.update(parent.unwrap_or("").as_bytes());
    hasher.update([0u8]);
    hasher.update(content.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// One commit in a path's chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Commit {
    pub hash: CommitHash,
    pub path: String,
    pub parent: Option<CommitHash>,
    pub content: String,
    pub author: String,
    /// Global write order across all paths.
    pub seq: u64,
}

/// Returned when a write's base ticket no longer matches HEAD.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub path: String,
    /// The writer's stale base; `None` means the writer believed the path
    /// did not exist yet.
    pub base_hash: Option<CommitHash>,
    pub head_hash: CommitHash,
    /// Content at the writer's base (empty when `base_hash` is `None`).
    pub base_content: String,
    pub head_content: String,
    pub attempted_content: String,
}

/// Accepted or conflicted; conflicts are data, not errors.
#[derive(Debug, Clone)]
pub enum WriteOutcome {
    Committed(CommitHash),
    Conflict(ConflictReport),
}

/// Outcome of a conflict resolution attempt.
#[derive(Debug, Clone)]
pub enum ResolveOutcome {
    Committed(CommitHash),
    /// HEAD moved again while the merge was being prepared; the fresh
    /// report reflects the new HEAD.
    Stale(ConflictReport),
}

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("invalid path {path}: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("unknown base hash {hash} for path {path}")]
    UnknownBaseHash { path: String, hash: String },
    #[error("workspace io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The shared store. Cheap to share behind an `Arc`; all mutation is
/// serialized internally.
pub struct Workspace {
    root: PathBuf,
    inner: Mutex<Inner>,
}

struct Inner {
    heads: HashMap<String, CommitHash>,
    commits: HashMap<CommitHash, Commit>,
    seq: u64,
}

impl Workspace {
    /// Open (or create) a workspace rooted at `root`. Existing commits are
    /// reloaded from `objects/` and `refs/`.
    pub fn open(root: &Path) -> Result<Self, WorkspaceError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e: std::io::Error| WorkspaceError::Io {
                path: p.clone(),
                source: e,
            }
        };
        for sub in ["objects", "refs", "files"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        let mut commits: HashMap<CommitHash, Commit> = HashMap::new();
        let objects_dir = root.join("objects");
        for entry in fs::read_dir(&objects_dir).map_err(io(&objects_dir))? {
            let entry = entry.map_err(io(&objects_dir))?;
            let text = fs::read_to_string(entry.path()).map_err(io(&entry.path()))?;
            let commit: Commit = serde_json::from_str(&text).map_err(|e| WorkspaceError::Io {
                path: entry.path(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            commits.insert(commit.hash.clone(), commit);
        }
        let mut heads = HashMap::new();
        let refs_dir = root.join("refs");
        for entry in fs::read_dir(&refs_dir).map_err(io(&refs_dir))? {
            let entry = entry.map_err(io(&refs_dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let hash = fs::read_to_string(entry.path()).map_err(io(&entry.path()))?;
            let hash = hash.trim().to_string();
            let path = unescape_ref(&name);
            heads.insert(path, hash);
        }
        let seq = commits.values().map(|c| c.seq + 1).max().unwrap_or(0);
        let ws = Workspace {
            root: root.to_path_buf(),
            inner: Mutex::new(Inner {
                heads,
                commits,
                seq,
            }),
        };
        ws.rematerialize()?;
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory holding the materialized current file tree; subprocesses
    /// run with this as their working directory.
    pub fn files_dir(&self) -> PathBuf {
        self.root.join("files")
    }

    /// Read the current content of a path along with its HEAD hash (the
    /// caller's write ticket).
    pub fn read(&self, path: &str) -> Result<(String, CommitHash), WorkspaceError> {
        validate_path(path)?;
        let inner = self.inner.lock();
        let head = inner
            .heads
            .get(path)
            .ok_or_else(|| WorkspaceError::UnknownPath(path.into()))?;
        let commit = &inner.commits[head];
        Ok((commit.content.clone(), head.clone()))
    }

    /// Current HEAD hash of a path, if it exists.
    pub fn head(&self, path: &str) -> Option<CommitHash> {
        self.inner.lock().heads.get(path).cloned()
    }

    /// All current paths with their HEAD hashes, sorted by path.
    pub fn heads(&self) -> BTreeMap<String, CommitHash> {
        self.inner
            .lock()
            .heads
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Look up a commit by hash.
    pub fn commit(&self, hash: &str) -> Option<Commit> {
        self.inner.lock().commits.get(hash).cloned()
    }

    /// Root-to-HEAD chain of commit hashes for a path.
    pub fn history(&self, path: &str) -> Result<Vec<CommitHash>, WorkspaceError> {
        let inner = self.inner.lock();
        let head = inner
            .heads
            .get(path)
            .ok_or_else(|| WorkspaceError::UnknownPath(path.into()))?;
        let mut chain = Vec::new();
        let mut cursor = Some(head.clone());
        while let Some(hash) = cursor {
            let commit = &inner.commits[&hash];
            cursor = commit.parent.clone();
            chain.push(hash);
        }
        chain.reverse();
        Ok(chain)
    }

    /// Attempt a write. `base` is the writer's ticket: the hash it last saw
    /// for this path, or `None` if it believes the path is new. A stale
    /// ticket yields `WriteOutcome::Conflict`; a ticket that was never a
    /// commit of this path is an error.
    pub fn write(
        &self,
        path: &str,
        content: &str,
        base: Option<&CommitHash>,
        author: &str,
    ) -> Result<WriteOutcome, WorkspaceError> {
        validate_path(path)?;
        let mut inner = self.inner.lock();
        if let Some(base_hash) = base {
            let known_for_path = inner
                .commits
                .get(base_hash)
                .map(|c| c.path == path)
                .unwrap_or(false);
            if !known_for_path {
                return Err(WorkspaceError::UnknownBaseHash {
                    path: path.into(),
                    hash: base_hash.clone(),
                });
            }
        }
        let head = inner.heads.get(path).cloned();
        if head.as_ref() != base {
            let head_hash = head.expect("conflict implies an existing head");
            let head_content = inner.commits[&head_hash].content.clone();
            let base_content = base
                .map(|h| inner.commits[h].content.clone())
                .unwrap_or_default();
            return Ok(WriteOutcome::Conflict(ConflictReport {
                path: path.into(),
                base_hash: base.cloned(),
                head_hash,
                base_content,
                head_content,
                attempted_content: content.into(),
            }));
        }
        let hash = self.commit_locked(&mut inner, path, content, base.cloned(), author)?;
        Ok(WriteOutcome::Committed(hash))
    }

    /// Retry a conflicted write with merged content. Succeeds only if HEAD
    /// is still where the report saw it; otherwise a fresh report comes back.
    pub fn resolve_conflict(
        &self,
        report: &ConflictReport,
        merged: &str,
        author: &str,
    ) -> Result<ResolveOutcome, WorkspaceError> {
        validate_path(&report.path)?;
        let mut inner = self.inner.lock();
        let head = inner.heads.get(&report.path).cloned();
        match head {
            Some(ref h) if *h == report.head_hash => {
                let hash =
                    self.commit_locked(&mut inner, &report.path, merged, Some(h.clone()), author)?;
                Ok(ResolveOutcome::Committed(hash))
            }
            Some(h) => {
                let head_content = inner.commits[&h].content.clone();
                Ok(ResolveOutcome::Stale(ConflictReport {
                    path: report.path.clone(),
                    base_hash: Some(report.head_hash.clone()),
                    head_hash: h,
                    base_content: report.head_content.clone(),
                    head_content,
                    attempted_content: merged.into(),
                }))
            }
            None => Err(WorkspaceError::UnknownPath(report.path.clone())),
        }
    }

    fn commit_locked(
        &self,
        inner: &mut Inner,
        path: &str,
        content: &str,
        parent: Option<CommitHash>,
        author: &str,
    ) -> Result<CommitHash, WorkspaceError> {
        let hash = commit_digest(path, parent.as_deref(), content);
        let commit = Commit {
            hash: hash.clone(),
            path: path.to_string(),
            parent,
            content: content.to_string(),
            author: author.to_string(),
            seq: inner.seq,
        };
        inner.seq += 1;
        self.persist_commit(&commit)?;
        inner.heads.insert(path.to_string(), hash.clone());
        inner.commits.insert(hash.clone(), commit);
        Ok(hash)
    }

    // -- persistence -------------------------------------------------------

    fn persist_commit(&self, commit: &Commit) -> Result<(), WorkspaceError> {
        let io = |p: PathBuf| {
            move |e: std::io::Error| WorkspaceError::Io {
                path: p.clone(),
                source: e,
            }
        };
        let obj = self.root.join("objects").join(&commit.hash);
        fs::write(
            &obj,
            serde_json::to_string(commit).expect("commit serializes"),
        )
        .map_err(io(obj.clone()))?;
        let reference = self.root.join("refs").join(escape_ref(&commit.path));
        fs::write(&reference, &commit.hash).map_err(io(reference.clone()))?;
        let file = self.root.join("files").join(&commit.path);
        if let Some(parent) = file.parent() {
            fs::create_dir_all(parent).map_err(io(parent.to_path_buf()))?;
        }
        fs::write(&file, &commit.content).map_err(io(file.clone()))?;
        let log_path = self.root.join("log.jsonl");
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(log_path.clone()))?;
        let line = serde_json::json!({
            "seq": commit.seq,
            "path": commit.path,
            "hash": commit.hash,
            "parent": commit.parent,
            "author": commit.author,
        });
        writeln!(log, "{line}").map_err(io(log_path.clone()))?;
        Ok(())
    }

    fn rematerialize(&self) -> Result<(), WorkspaceError> {
        let inner = self.inner.lock();
        for (path, head) in &inner.heads {
            let commit = &inner.commits[head];
            let file = self.root.join("files").join(path);
            if let Some(parent) = file.parent() {
                fs::create_dir_all(parent).map_err(|e| WorkspaceError::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            fs::write(&file, &commit.content).map_err(|e| WorkspaceError::Io {
                path: file.clone(),
                source: e,
            })?;
        }
        Ok(())
    }
}

/// Paths must be clean and relative: no leading separators, no `.`/`..`
/// components, no backslashes or NULs.
pub fn validate_path(path: &str) -> Result<(), WorkspaceError> {
    let invalid = |reason: &str| WorkspaceError::InvalidPath {
        path: path.into(),
        reason: reason.into(),
    };
    if path.is_empty() {
        return Err(invalid("empty"));
    }
    if path.contains('\0') || path.contains('\\') {
        return Err(invalid("forbidden character"));
    }
    if path.starts_with('/') {
        return Err(invalid("absolute paths are not allowed"));
    }
    for component in path.split('/') {
        if component.is_empty() {
            return Err(invalid("empty path component"));
        }
        if component == "." || component == ".." {
            return Err(invalid("path traversal is not allowed"));
        }
    }
    Ok(())
}

fn escape_ref(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for c in path.chars() {
        match c {
            '/' => out.push_str("%2F"),
            '%' => out.push_str("%25"),
            other => out.push(other),
        }
    }
    out
}

fn unescape_ref(name: &str) -> String {
    name.replace("%2F", "/").replace("%25", "%")
}
