//! Append-only JSONL event log.
//!
//! Every externally visible runtime step (state transitions, enqueues,
//! batches, model calls, tool calls, commits, failures, ...) is one line:
//!
//! ```json
//! {"ts": 0.0421, "seq": 17, "agent": "Carol", "event": "enqueue", "detail": {...}}
//! ```
//!
//! `ts` is seconds since run start, `seq` a global monotone counter that
//! fixes a total order even when timestamps collide. The log is the replay
//! and debugging substrate: [`crate::replay`] re-validates runtime
//! invariants from it offline, and the report command folds usage from it.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Event kind names used throughout the runtime.
pub mod kind {
    pub const SPAWN: &str = "spawn";
    pub const STATE: &str = "state";
    pub const ENQUEUE: &str = "enqueue";
    pub const BATCH: &str = "batch";
    pub const MODEL_CALL: &str = "model_call";
    pub const TOOL_CALL: &str = "tool_call";
    pub const DISPATCH: &str = "dispatch";
    pub const COMMIT: &str = "commit";
    pub const VERIFY: &str = "verify";
    pub const FAILURE: &str = "failure";
    pub const REMEDIATION: &str = "remediation";
    pub const VALIDATION: &str = "validation";
    pub const TERMINATE: &str = "terminate";
    pub const REVIVE: &str = "revive";
    pub const REPLACE: &str = "replace";
    pub const STAGE: &str = "stage";
    pub const PARSE_WARNING: &str = "parse_warning";
    pub const RUN_COMPLETE: &str = "run_complete";
    pub const ABORT: &str = "abort";
}

/// One log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: f64,
    pub seq: u64,
    pub agent: String,
    pub event: String,
    #[serde(default)]
    pub detail: Value,
}

/// Thread-safe JSONL sink. Lines are flushed eagerly so a crashed run
/// leaves at most one truncated line.
pub struct EventLog {
    path: PathBuf,
    start: Instant,
    seq: AtomicU64,
    sink: Mutex<BufWriter<File>>,
}

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error("cannot open event log {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self, EventLogError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| EventLogError::Open {
                    path: path.to_path_buf(),
                    source: e,
                })?;
            }
        }
        let file = File::create(path).map_err(|e| EventLogError::Open {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(EventLog {
            path: path.to_path_buf(),
            start: Instant::now(),
            seq: AtomicU64::new(0),
            sink: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Seconds since the log (and hence the run) started.
    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Append one event. Returns the global event sequence number.
    pub fn log(&self, agent: &str, event: &str, detail: Value) -> u64 {
        let record = EventRecord {
            ts: self.start.elapsed().as_secs_f64(),
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            agent: agent.to_string(),
            event: event.to_string(),
            detail,
        };
        let line = serde_json::to_string(&record).expect("event record serializes");
        let mut sink = self.sink.lock();
        // single writeln under the lock keeps lines atomic
        writeln!(sink, "{line}").expect("event log write");
        sink.flush().expect("event log flush");
        record.seq
    }
}
