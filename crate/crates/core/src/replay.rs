//! Offline event-log validation and folding.
//!
//! A run's event log is a total order (the log lock is the message lock,
//! so enqueue and drain entries appear in their true order). That makes
//! the log strong enough to re-check the runtime's guarantees after the
//! fact:
//!
//! - state edges: only the four legal lifecycle transitions appear;
//! - batching: every drained batch is exactly the recipient's queue at
//!   drain time, in FIFO order, so each message is consumed by the first
//!   batch after its enqueue and none is lost or duplicated;
//! - model discipline: cycle-kind model calls happen only while the agent
//!   is Processing;
//! - verification: every batch is followed by exactly one verification
//!   before the agent drains again;
//! - clean completion: a run that claims completion has no queued
//!   messages, no agent mid-cycle, and no unverified batch.
//!
//! Folding rebuilds the usage report and hierarchy figures from the log
//! alone, so a stored log can be audited without the run directory.

use crate::event::{kind, EventRecord};
use crate::metrics::{Stage, StageReport, TokenUsage};
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

/// One parsed log line, keeping its 1-indexed position for diagnostics.
#[derive(Debug, Clone)]
pub struct LoggedEvent {
    pub line: u64,
    pub record: EventRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: not a valid event record: {message}")]
    Malformed { line: u64, message: String },
    #[error("unexpected end of log: line {line} is truncated")]
    TruncatedTail { line: u64 },
}

/// First rule violation found, with the line that proves it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: u64,
    pub agent: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: agent {}: {}",
            self.line, self.agent, self.message
        )
    }
}

/// Everything a log folds down to.
#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub events: usize,
    pub agents: usize,
    pub max_depth: usize,
    /// Agents per hierarchy level, index 0 being the root.
    pub level_sizes: Vec<usize>,
    pub report: StageReport,
    pub validation_rounds: u64,
    pub aborted: Option<String>,
    /// True when the log ends in a claimed completion.
    pub clean: bool,
}

pub fn read_log(path: &Path) -> Result<Vec<LoggedEvent>, ReplayError> {
    let raw = std::fs::read_to_string(path).map_err(|e| ReplayError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let ends_with_newline = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let number = (i + 1) as u64;
        match serde_json::from_str::<EventRecord>(line) {
            Ok(record) => events.push(LoggedEvent {
                line: number,
                record,
            }),
            Err(e) => {
                // an unparseable final line without a newline is a torn write
                if i + 1 == lines.len() && !ends_with_newline {
                    return Err(ReplayError::TruncatedTail { line: number });
                }
                return Err(ReplayError::Malformed {
                    line: number,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(events)
}

const LEGAL_EDGES: [(&str, &str); 4] = [
    ("idle", "processing"),
    ("processing", "response"),
    ("response", "processing"),
    ("response", "idle"),
];

#[derive(Default)]
struct AgentTrack {
    state: String,
    queue: VecDeque<u64>,
    expect_verify: bool,
    replaced: bool,
}

fn track_for<'t>(tracks: &'t mut HashMap<String, AgentTrack>, agent: &str) -> &'t mut AgentTrack {
    tracks
        .entry(agent.to_string())
        .or_insert_with(|| AgentTrack {
            state: "idle".to_string(),
            ..AgentTrack::default()
        })
}

/// Check every runtime guarantee the log can prove. On success the folded
/// summary is returned; on failure, the first violation.
pub fn validate(events: &[LoggedEvent]) -> Result<ReplaySummary, Violation> {
    let mut tracks: HashMap<String, AgentTrack> = HashMap::new();
    let violation = |e: &LoggedEvent, message: String| Violation {
        line: e.line,
        agent: e.record.agent.clone(),
        message,
    };

    for e in events {
        let agent = e.record.agent.as_str();
        let detail = &e.record.detail;
        match e.record.event.as_str() {
            kind::SPAWN => {
                track_for(&mut tracks, agent);
            }
            kind::STATE => {
                let from = detail["from"].as_str().unwrap_or("?");
                let to = detail["to"].as_str().unwrap_or("?");
                let track = track_for(&mut tracks, agent);
                if track.state != from {
                    return Err(violation(
                        e,
                        format!("illegal edge {from} -> {to}: agent was {}", track.state),
                    ));
                }
                if !LEGAL_EDGES.contains(&(from, to)) {
                    return Err(violation(e, format!("illegal edge {from} -> {to}")));
                }
                track.state = to.to_string();
            }
            kind::ENQUEUE => {
                let Some(seq) = detail["seq"].as_u64() else {
                    return Err(violation(e, "enqueue without seq".to_string()));
                };
                if let Some(from) = detail["transfer_from"].as_str() {
                    let orig = detail["orig_seq"].as_u64();
                    let victim = track_for(&mut tracks, from);
                    match victim.queue.pop_front() {
                        Some(head) if Some(head) == orig => {}
                        Some(head) => {
                            return Err(violation(
                                e,
                                format!("transfer out of order: expected seq {head}, got {orig:?}"),
                            ))
                        }
                        None => {
                            return Err(violation(
                                e,
                                format!("transfer from {from} with an empty queue"),
                            ))
                        }
                    }
                }
                track_for(&mut tracks, agent).queue.push_back(seq);
            }
            kind::BATCH => {
                let seqs: Vec<u64> = detail["seqs"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|v| v.as_u64()).collect())
                    .unwrap_or_default();
                let track = track_for(&mut tracks, agent);
                if track.state != "processing" {
                    return Err(violation(e, format!("batch drained while {}", track.state)));
                }
                if track.expect_verify {
                    return Err(violation(
                        e,
                        "batch drained before the previous batch was verified".to_string(),
                    ));
                }
                let queued: Vec<u64> = track.queue.iter().copied().collect();
                if queued != seqs {
                    return Err(violation(
                        e,
                        format!("batch {seqs:?} is not the queue at drain time {queued:?}"),
                    ));
                }
                track.queue.clear();
                track.expect_verify = true;
            }
            kind::MODEL_CALL => {
                if detail["kind"].as_str() == Some("cycle") {
                    let track = track_for(&mut tracks, agent);
                    if track.state != "processing" {
                        return Err(violation(
                            e,
                            format!("cycle model call while {}", track.state),
                        ));
                    }
                }
            }
            kind::VERIFY => {
                let track = track_for(&mut tracks, agent);
                if !track.expect_verify {
                    return Err(violation(
                        e,
                        "verification without a drained batch".to_string(),
                    ));
                }
                track.expect_verify = false;
            }
            kind::REPLACE => {
                let track = track_for(&mut tracks, agent);
                if !track.queue.is_empty() {
                    return Err(violation(
                        e,
                        format!("replaced with {} messages still queued", track.queue.len()),
                    ));
                }
                track.replaced = true;
            }
            kind::RUN_COMPLETE => {
                for (name, track) in &tracks {
                    if !track.queue.is_empty() {
                        return Err(violation(
                            e,
                            format!(
                                "run completed but {name} still has queued seqs {:?}",
                                track.queue
                            ),
                        ));
                    }
                    if track.state == "processing" {
                        return Err(violation(
                            e,
                            format!("run completed while {name} was processing"),
                        ));
                    }
                    if track.expect_verify {
                        return Err(violation(
                            e,
                            format!("run completed before {name} verified its last batch"),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(fold(events))
}

/// Rebuild the run figures from the log alone, with no rule checking.
pub fn fold(events: &[LoggedEvent]) -> ReplaySummary {
    let mut agents = 0usize;
    let mut level_sizes: Vec<usize> = Vec::new();
    let mut stage_usage = [TokenUsage::default(); 3];
    let mut total = TokenUsage::default();
    let mut stage_starts: [Option<f64>; 2] = [None, None];
    let mut validation_rounds = 0u64;
    let mut aborted = None;
    let mut clean = false;

    for e in events {
        let detail = &e.record.detail;
        match e.record.event.as_str() {
            kind::SPAWN => {
                agents += 1;
                let depth = detail["depth"].as_u64().unwrap_or(0) as usize;
                if level_sizes.len() <= depth {
                    level_sizes.resize(depth + 1, 0);
                }
                level_sizes[depth] += 1;
            }
            kind::MODEL_CALL => {
                let stage = serde_json::from_value::<Stage>(detail["stage"].clone())
                    .unwrap_or(Stage::Planning);
                let usage = TokenUsage::new(
                    detail["input_tokens"].as_u64().unwrap_or(0),
                    detail["output_tokens"].as_u64().unwrap_or(0),
                );
                stage_usage[stage as usize].add(usage);
                total.add(usage);
            }
            kind::STAGE => {
                let label = detail["stage"].as_str().unwrap_or("");
                if label == Stage::TaskSolving.label() {
                    stage_starts[0].get_or_insert(e.record.ts);
                } else if label == Stage::Merging.label() {
                    stage_starts[1].get_or_insert(e.record.ts);
                }
            }
            kind::VALIDATION => {
                validation_rounds = validation_rounds.max(detail["round"].as_u64().unwrap_or(0));
            }
            kind::RUN_COMPLETE => {
                clean = true;
                if let Some(r) = detail["validation_rounds"].as_u64() {
                    validation_rounds = validation_rounds.max(r);
                }
            }
            kind::ABORT => {
                aborted = detail["reason"].as_str().map(str::to_string);
            }
            _ => {}
        }
    }

    let end = events.last().map(|e| e.record.ts).unwrap_or(0.0);
    let t1 = stage_starts[0].unwrap_or(end);
    let t2 = stage_starts[1].unwrap_or(end).max(t1);
    let windows = [(0.0, t1), (t1, t2), (t2, end)];
    let max_depth = level_sizes.len().saturating_sub(1);
    let report = StageReport::from_parts(stage_usage, total, windows, agents);
    ReplaySummary {
        events: events.len(),
        agents,
        max_depth,
        level_sizes,
        report,
        validation_rounds,
        aborted,
        clean,
    }
}
