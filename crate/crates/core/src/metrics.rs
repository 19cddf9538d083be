//! Stage-labelled token accounting.
//!
//! Every model call lands in the [`UsageLedger`] tagged with the run stage
//! that was current when the call started. A [`StageClock`] owns the stage
//! boundaries (Planning ends when kickoff messages are enqueued, Merging
//! begins at quiescence) and the ledger refuses records for stages that
//! have already been closed, so totals are append-complete by construction.
//!
//! [`StageReport`] renders the ledger as a per-stage table (input / output /
//! total tokens plus the wall-clock window of each stage), grand totals, the
//! input:output ratio, and the average wall time per spawned agent.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::{Duration, Instant};

/// Token counts for one model call (or an accumulated sum of calls).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// The three phases of a run, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planning,
    TaskSolving,
    Merging,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Planning, Stage::TaskSolving, Stage::Merging];

    pub fn label(&self) -> &'static str {
        match self {
            Stage::Planning => "Planning",
            Stage::TaskSolving => "Task-Solving",
            Stage::Merging => "Merging",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("stage {0} is closed; usage can no longer be recorded against it")]
    StageClosed(Stage),
}

/// One ledger line: who spent what, when, in which stage.
#[derive(Debug, Clone, Serialize)]
pub struct UsageRecord {
    pub agent: String,
    pub stage: Stage,
    pub usage: TokenUsage,
    /// Latency of the call itself.
    pub duration: Duration,
    /// Offset from run start when the call completed.
    pub at: Duration,
}

/// Append-only usage ledger. Thread-safe; records are never mutated.
pub struct UsageLedger {
    inner: Mutex<LedgerInner>,
}

struct LedgerInner {
    records: Vec<UsageRecord>,
    closed: [bool; 3],
}

impl UsageLedger {
    pub fn new() -> Self {
        UsageLedger {
            inner: Mutex::new(LedgerInner {
                records: Vec::new(),
                closed: [false; 3],
            }),
        }
    }

    pub fn record(
        &self,
        agent: &str,
        stage: Stage,
        usage: TokenUsage,
        duration: Duration,
        at: Duration,
    ) -> Result<(), MetricsError> {
        let mut inner = self.inner.lock();
        if inner.closed[stage as usize] {
            return Err(MetricsError::StageClosed(stage));
        }
        inner.records.push(UsageRecord {
            agent: agent.to_string(),
            stage,
            usage,
            duration,
            at,
        });
        Ok(())
    }

    /// Close a stage; later records against it are an error.
    pub fn close(&self, stage: Stage) {
        self.inner.lock().closed[stage as usize] = true;
    }

    pub fn snapshot(&self) -> Vec<UsageRecord> {
        self.inner.lock().records.clone()
    }

    /// Per-stage sums plus the grand total.
    pub fn stage_totals(&self) -> ([TokenUsage; 3], TokenUsage) {
        let inner = self.inner.lock();
        let mut stages = [TokenUsage::default(); 3];
        let mut total = TokenUsage::default();
        for r in &inner.records {
            stages[r.stage as usize].add(r.usage);
            total.add(r.usage);
        }
        (stages, total)
    }
}

impl Default for UsageLedger {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Stage clock
// ---------------------------------------------------------------------------

/// Tracks the current stage and the wall-clock boundary of each transition.
pub struct StageClock {
    start: Instant,
    inner: Mutex<ClockInner>,
}

struct ClockInner {
    current: Stage,
    /// Offsets (seconds) at which TaskSolving began, Merging began, run ended.
    boundaries: [Option<f64>; 3],
}

impl StageClock {
    pub fn new() -> Self {
        StageClock {
            start: Instant::now(),
            inner: Mutex::new(ClockInner {
                current: Stage::Planning,
                boundaries: [None; 3],
            }),
        }
    }

    pub fn current(&self) -> Stage {
        self.inner.lock().current
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    /// Advance to a later stage, recording the boundary. Going backwards is
    /// a programming error and panics.
    pub fn advance(&self, to: Stage) {
        let mut inner = self.inner.lock();
        assert!(to > inner.current, "stage clock cannot move backwards");
        let now = self.start.elapsed().as_secs_f64();
        if to >= Stage::TaskSolving {
            inner.boundaries[0].get_or_insert(now);
        }
        if to >= Stage::Merging {
            inner.boundaries[1].get_or_insert(now);
        }
        inner.current = to;
    }

    /// Mark the end of the run.
    pub fn finish(&self) {
        let mut inner = self.inner.lock();
        let now = self.start.elapsed().as_secs_f64();
        inner.boundaries[0].get_or_insert(now);
        inner.boundaries[1].get_or_insert(now);
        inner.boundaries[2] = Some(now);
    }

    /// [start, end) window in seconds for each stage, in stage order.
    pub fn windows(&self) -> [(f64, f64); 3] {
        let inner = self.inner.lock();
        let end = inner.boundaries[2].unwrap_or_else(|| self.start.elapsed().as_secs_f64());
        let t1 = inner.boundaries[0].unwrap_or(end);
        let t2 = inner.boundaries[1].unwrap_or(end);
        [(0.0, t1), (t1, t2), (t2, end)]
    }
}

impl Default for StageClock {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// One row of the stage table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageRow {
    pub stage: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    /// Stage window, seconds since run start.
    pub window_start_s: f64,
    pub window_end_s: f64,
}

/// Ledger snapshot embedded in deliverables: per-stage token sums.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LedgerSnapshot {
    pub stages: Vec<StageRow>,
}

/// Full usage report: the stage table plus derived figures.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageReport {
    pub stages: Vec<StageRow>,
    pub total: StageRow,
    /// Grand input/output ratio, e.g. 23.4.
    pub input_output_ratio: f64,
    /// Ratio rendered as "23:1".
    pub input_output_ratio_display: String,
    /// Total wall time divided by agents spawned, in seconds.
    pub time_per_agent_s: f64,
    pub agents_spawned: usize,
}

impl StageReport {
    pub fn build(ledger: &UsageLedger, clock: &StageClock, agents_spawned: usize) -> Self {
        let (stage_usage, total_usage) = ledger.stage_totals();
        let windows = clock.windows();
        Self::from_parts(stage_usage, total_usage, windows, agents_spawned)
    }

    /// Build from already-summed figures (used by offline log folding).
    pub fn from_parts(
        stage_usage: [TokenUsage; 3],
        total_usage: TokenUsage,
        windows: [(f64, f64); 3],
        agents_spawned: usize,
    ) -> Self {
        let stages: Vec<StageRow> = Stage::ALL
            .iter()
            .map(|s| {
                let u = stage_usage[*s as usize];
                let w = windows[*s as usize];
                StageRow {
                    stage: s.label().to_string(),
                    input_tokens: u.input_tokens,
                    output_tokens: u.output_tokens,
                    total_tokens: u.total(),
                    window_start_s: w.0,
                    window_end_s: w.1,
                }
            })
            .collect();
        let wall = windows[2].1;
        let ratio = if total_usage.output_tokens == 0 {
            0.0
        } else {
            total_usage.input_tokens as f64 / total_usage.output_tokens as f64
        };
        StageReport {
            total: StageRow {
                stage: "Total".to_string(),
                input_tokens: total_usage.input_tokens,
                output_tokens: total_usage.output_tokens,
                total_tokens: total_usage.total(),
                window_start_s: 0.0,
                window_end_s: wall,
            },
            stages,
            input_output_ratio: ratio,
            input_output_ratio_display: format!("{}:1", ratio.round() as u64),
            time_per_agent_s: if agents_spawned == 0 {
                0.0
            } else {
                wall / agents_spawned as f64
            },
            agents_spawned,
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            stages: self.stages.clone(),
        }
    }

    /// Plain-text table with aligned columns.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<[String; 5]> = Vec::new();
        rows.push([
            "Stage".into(),
            "Input Tokens".into(),
            "Output Tokens".into(),
            "Total Tokens".into(),
            "Time (s)".into(),
        ]);
        for row in self.stages.iter().chain(std::iter::once(&self.total)) {
            rows.push([
                row.stage.clone(),
                row.input_tokens.to_string(),
                row.output_tokens.to_string(),
                row.total_tokens.to_string(),
                format!("{:.2}-{:.2}", row.window_start_s, row.window_end_s),
            ]);
        }
        let mut widths = [0usize; 5];
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let mut out = String::new();
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                // left-align the stage column, right-align numbers
                if i == 0 {
                    out.push_str(&format!("{:<width$}", cell, width = widths[i]));
                } else {
                    out.push_str(&format!("{:>width$}", cell, width = widths[i]));
                }
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "input:output ratio {}   time per agent {:.2}s   agents {}\n",
            self.input_output_ratio_display, self.time_per_agent_s, self.agents_spawned
        ));
        out
    }
}
