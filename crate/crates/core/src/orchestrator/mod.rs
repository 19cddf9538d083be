//! Run orchestration: one meta-prompt in, one validated deliverable out.
//!
//! A run moves through three stages. In Planning the Boss is spawned with
//! the meta-prompt and asked to decompose it into employees; each becomes
//! a group-leading agent under the Boss. Task-Solving starts at kickoff
//! and is monitored from here: whenever the system goes quiescent (no
//! queued messages, no agent mid-cycle) the checklists are swept, stale
//! groups are re-validated by their leaders, and the Boss reviews the
//! whole result. Acceptance moves the run to Merging, where the current
//! workspace heads are frozen into the deliverable.
//!
//! Runtime failures (backend loss, deadlock, escalations that reach the
//! root) abort the run rather than erroring out: the partial deliverable,
//! the abort reason, and the full event log are still returned.

pub mod meta;

use crate::config::{HttpConfig, RuntimeConfig};
use crate::context::RuntimeContext;
use crate::event::{kind, EventLog, EventLogError};
use crate::gateway::http::HttpBackend;
use crate::gateway::scripted::{ScriptedBackend, ScriptedScenario};
use crate::gateway::{Backend, CallKind, ChatRequest, ContextMessage, Gateway, GatewayError};
use crate::memory::{MemoryError, MemoryStore};
use crate::metrics::{LedgerSnapshot, Stage, StageClock, StageReport, UsageLedger};
use crate::runtime::{AgentHandle, AgentSpec, BOSS_NAME, SUPERVISOR_SENDER};
use crate::supervisor::validate::{self, ValidationError, Verdict};
use crate::supervisor::{checklist, FailureKind};
use crate::tools::{self, registry_schemas};
use crate::workspace::{Workspace, WorkspaceError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Agent column used for run-level events (stage changes, completion).
const ORCHESTRATOR: &str = "orchestrator";

/// Which model backend drives the run.
pub enum BackendChoice {
    Scripted(ScriptedScenario),
    Http(HttpConfig),
}

pub struct RunOptions {
    pub config: RuntimeConfig,
    pub backend: BackendChoice,
    /// Directory receiving the workspace, memory, log, and artifacts.
    pub run_dir: PathBuf,
    /// Event log location; defaults to `<run_dir>/log.jsonl`.
    pub log_path: Option<PathBuf>,
    /// Serialize all processing cycles (one agent at a time).
    pub serial: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DeliverableFile {
    pub path: String,
    pub hash: String,
}

/// The aggregated output of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deliverable {
    pub files: Vec<DeliverableFile>,
    pub summary: String,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub deliverable: Deliverable,
    /// `Some(reason)` when the run aborted; the deliverable is partial.
    pub aborted: Option<String>,
    pub report: StageReport,
    pub agents_spawned: usize,
    pub validation_rounds: u64,
    pub log_path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    EventLog(#[from] EventLogError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const DECOMPOSITION_INSTRUCTION: &str = "Decompose the task in your instructions into a team. \
Output one <employee name=\"AgentName\">system prompt describing that agent's job</employee> \
block per teammate, and optionally <beginner>AgentName</beginner> naming who should start. \
Recruit coordinators, not yourself: do not solve the task directly. If the task needs no team \
at all, call TERMINATE.";

const KICKOFF_TEXT: &str = "Begin your work now. Coordinate with your teammates by msg blocks, \
recruit subordinates with add_agent when the work splits further, keep outstanding work in \
your todo file, and call TERMINATE once everything you own is done.";

pub fn run(meta_prompt: &str, options: RunOptions) -> Result<RunSummary, OrchestratorError> {
    let RunOptions {
        config,
        backend,
        run_dir,
        log_path,
        serial,
    } = options;
    std::fs::create_dir_all(&run_dir).map_err(|e| OrchestratorError::Io {
        path: run_dir.clone(),
        source: e,
    })?;
    let log_path = log_path.unwrap_or_else(|| run_dir.join("log.jsonl"));

    let backend: Arc<dyn Backend> = match backend {
        BackendChoice::Scripted(scenario) => Arc::new(ScriptedBackend::new(scenario)),
        BackendChoice::Http(http) => Arc::new(HttpBackend::new(http)),
    };
    let events = Arc::new(EventLog::create(&log_path)?);
    let ledger = Arc::new(UsageLedger::new());
    let clock = Arc::new(StageClock::new());
    let gateway = Gateway::new(backend, ledger.clone(), clock.clone(), events.clone());
    let workspace = Arc::new(Workspace::open(&run_dir.join("workspace"))?);
    let memory = MemoryStore::open(&run_dir.join("memory"))?;
    let ctx = RuntimeContext::new(
        config,
        serial,
        gateway,
        workspace,
        memory,
        events.clone(),
        ledger.clone(),
        clock.clone(),
    );

    let mut validation_rounds = 0u64;
    let mut clean_empty: Option<String> = None;

    let boss = match ctx.spawn_boss(meta_prompt) {
        Ok(handle) => Some(handle),
        Err(e) => {
            ctx.request_abort(&format!("cannot spawn the root agent: {e}"));
            None
        }
    };

    if let Some(boss) = &boss {
        match bootstrap(&ctx, boss) {
            Bootstrap::Team(plan) => {
                if let Some(plan) = spawn_team(&ctx, boss, plan) {
                    events.log(
                        ORCHESTRATOR,
                        kind::STAGE,
                        json!({"stage": Stage::TaskSolving.label()}),
                    );
                    ctx.clock.advance(Stage::TaskSolving);
                    ctx.ledger.close(Stage::Planning);
                    kickoff(&ctx, &plan);
                    validation_rounds = monitor(&ctx, boss);
                }
            }
            Bootstrap::NoTeamNeeded(text) => clean_empty = Some(text),
            Bootstrap::Failed => {}
        }
    }

    // Merging: freeze the workspace heads and aggregate
    if ctx.clock.current() < Stage::TaskSolving {
        ctx.clock.advance(Stage::TaskSolving);
        ctx.ledger.close(Stage::Planning);
    }
    events.log(
        ORCHESTRATOR,
        kind::STAGE,
        json!({"stage": Stage::Merging.label()}),
    );
    ctx.clock.advance(Stage::Merging);
    ctx.ledger.close(Stage::TaskSolving);

    let files: Vec<DeliverableFile> = ctx
        .workspace
        .heads()
        .into_iter()
        .map(|(path, hash)| DeliverableFile { path, hash })
        .collect();
    let aborted = ctx.abort_reason();
    let summary = match (&aborted, &clean_empty, &boss) {
        (Some(reason), _, _) => format!("aborted: {reason}"),
        (None, Some(text), _) => text.clone(),
        (None, None, Some(boss)) => aggregate_summary(&ctx, boss, &files),
        (None, None, None) => unreachable!("no boss implies an abort reason"),
    };

    match &aborted {
        Some(reason) => {
            events.log(ORCHESTRATOR, kind::ABORT, json!({"reason": reason}));
        }
        None => {
            events.log(
                ORCHESTRATOR,
                kind::RUN_COMPLETE,
                json!({
                    "validation_rounds": validation_rounds,
                    "agents": ctx.registry.len(),
                    "files": files.len(),
                }),
            );
        }
    }

    ctx.shutdown_and_join();
    ctx.clock.finish();
    ctx.ledger.close(Stage::Merging);

    let agents_spawned = ctx.registry.len();
    let report = StageReport::build(&ctx.ledger, &ctx.clock, agents_spawned);
    let deliverable = Deliverable {
        files,
        summary,
        ledger: report.snapshot(),
    };

    let deliverable_path = run_dir.join("deliverable.json");
    std::fs::write(
        &deliverable_path,
        serde_json::to_string_pretty(&deliverable).expect("serializable") + "\n",
    )
    .map_err(|e| OrchestratorError::Io {
        path: deliverable_path,
        source: e,
    })?;
    let report_path = run_dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    )
    .map_err(|e| OrchestratorError::Io {
        path: report_path,
        source: e,
    })?;

    Ok(RunSummary {
        deliverable,
        aborted,
        report,
        agents_spawned,
        validation_rounds,
        log_path,
    })
}

/// Make one decomposition call against `backend` and parse the plan,
/// without spawning a runtime. Smoke-tests an endpoint for the price of
/// a single model call.
pub fn probe_decomposition(
    meta_prompt: &str,
    config: &RuntimeConfig,
    backend: &dyn Backend,
) -> Result<meta::DecompositionPlan, GatewayError> {
    let request = ChatRequest {
        agent_name: BOSS_NAME.to_string(),
        system_prompt: meta_prompt.to_string(),
        context: vec![ContextMessage::new(
            SUPERVISOR_SENDER,
            DECOMPOSITION_INSTRUCTION,
        )],
        tool_schemas: registry_schemas().to_vec(),
        temperature: config.temperature,
    };
    let (text, _) = backend.infer(&request)?;
    Ok(meta::parse_decomposition(&text))
}

enum Bootstrap {
    Team(meta::DecompositionPlan),
    /// The Boss terminated instead of recruiting: a clean empty run.
    NoTeamNeeded(String),
    Failed,
}

fn bootstrap(ctx: &Arc<RuntimeContext>, boss: &Arc<AgentHandle>) -> Bootstrap {
    let mut context = vec![ContextMessage::new(
        SUPERVISOR_SENDER,
        DECOMPOSITION_INSTRUCTION,
    )];
    for attempt in 0..2 {
        let request = ChatRequest {
            agent_name: boss.name.clone(),
            system_prompt: boss.system_prompt.clone(),
            context: context.clone(),
            tool_schemas: registry_schemas().to_vec(),
            temperature: ctx.config.temperature,
        };
        let response = match ctx.complete_for(boss, &request, CallKind::Bootstrap) {
            Ok(response) => response,
            Err(e) => {
                ctx.request_abort(&format!("model backend failed during decomposition: {e}"));
                return Bootstrap::Failed;
            }
        };
        let plan = meta::parse_decomposition(&response.text);
        for problem in &plan.problems {
            ctx.events.log(
                &boss.name,
                kind::PARSE_WARNING,
                json!({"reason": "decomposition", "snippet": problem}),
            );
        }
        if !plan.employees.is_empty() {
            return Bootstrap::Team(plan);
        }
        if response
            .parsed_calls
            .iter()
            .any(|c| c.tool == tools::TERMINATE)
        {
            boss.finished
                .store(true, std::sync::atomic::Ordering::SeqCst);
            ctx.events
                .log(&boss.name, kind::TERMINATE, json!({"at": "decomposition"}));
            return Bootstrap::NoTeamNeeded(response.text);
        }
        if attempt == 0 {
            context.push(ContextMessage::new(&boss.name, &response.text));
            context.push(ContextMessage::new(
                SUPERVISOR_SENDER,
                "SUPERVISOR:FormatError the plan contained no employee blocks. Output at least \
                 one <employee name=\"...\">...</employee> block, or call TERMINATE if no team \
                 is needed.",
            ));
        }
    }
    ctx.request_abort("decomposition produced no employees after a retry");
    Bootstrap::Failed
}

/// Spawn every employee as a group leader under the Boss. Returns `None`
/// when spawning fails hard enough to abort.
fn spawn_team(
    ctx: &Arc<RuntimeContext>,
    boss: &Arc<AgentHandle>,
    plan: meta::DecompositionPlan,
) -> Option<meta::DecompositionPlan> {
    let boss_group = boss.leads_group().expect("the boss leads a group");
    for employee in &plan.employees {
        let leads = ctx.registry.mint_group();
        let spec = AgentSpec {
            name: employee.name.clone(),
            parent: Some(BOSS_NAME.to_string()),
            depth: 1,
            group: Some(boss_group),
            leads: Some(leads),
            system_prompt: employee.prompt.clone(),
            is_boss: false,
        };
        if let Err(e) = ctx.spawn_agent(spec) {
            ctx.request_abort(&format!("cannot spawn employee {}: {e}", employee.name));
            return None;
        }
    }
    Some(plan)
}

fn kickoff(ctx: &Arc<RuntimeContext>, plan: &meta::DecompositionPlan) {
    let starters: Vec<String> = match &plan.beginner {
        Some(name) => vec![name.clone()],
        None => plan.employees.iter().map(|e| e.name.clone()).collect(),
    };
    for name in starters {
        let _ = ctx
            .registry
            .post(&ctx.events, BOSS_NAME, &name, KICKOFF_TEXT);
    }
}

/// Watch the run until the Boss accepts the result or it aborts. Returns
/// the number of validation passes performed.
fn monitor(ctx: &Arc<RuntimeContext>, boss: &Arc<AgentHandle>) -> u64 {
    let mut rounds = 0u64;
    let mut group_snapshots: HashMap<String, Vec<(String, u64)>> = HashMap::new();
    loop {
        if !wait_for_quiescence(ctx) {
            return rounds;
        }
        if sweep_checklists(ctx) {
            continue;
        }
        if ctx.abort_reason().is_some() {
            return rounds;
        }

        rounds += 1;
        match validation_pass(ctx, boss, &mut group_snapshots, rounds) {
            Pass::Accepted => return rounds,
            Pass::MoreWork => continue,
            Pass::Aborted => return rounds,
        }
    }
}

/// Block until no message is queued and no agent is mid-cycle. Aborts the
/// run (returning false) when the deadlock timeout passes without that.
fn wait_for_quiescence(ctx: &Arc<RuntimeContext>) -> bool {
    let started = Instant::now();
    loop {
        if ctx.abort_reason().is_some() {
            return false;
        }
        if ctx.registry.is_quiescent() {
            // double-check after a beat: counters move opposite directions
            std::thread::sleep(Duration::from_millis(2));
            if ctx.registry.is_quiescent() {
                return true;
            }
        }
        if started.elapsed() > ctx.config.deadlock_timeout {
            let stuck: Vec<String> = ctx
                .registry
                .all()
                .iter()
                .filter(|a| a.queue_len() > 0)
                .map(|a| format!("{}({} queued)", a.name, a.queue_len()))
                .collect();
            ctx.request_abort(&format!(
                "DeadlockSuspected: no quiescence within {:?}; stuck: [{}]",
                ctx.config.deadlock_timeout,
                stuck.join(", ")
            ));
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// Prompt every live agent whose checklist still has open items. Returns
/// true when at least one prompt went out (more work pending).
fn sweep_checklists(ctx: &Arc<RuntimeContext>) -> bool {
    let mut prompted = false;
    for agent in ctx.registry.all() {
        if agent.is_boss || agent.is_replaced() {
            continue;
        }
        let todo = checklist::read_checklist(&ctx.workspace, &agent.name);
        if todo.is_complete() {
            continue;
        }
        ctx.supervisor.remediate(
            ctx,
            &agent,
            FailureKind::IncompleteTodo,
            &format!(
                "work stopped while todo_{}.txt has open items: {}",
                agent.name,
                todo.open_items().join("; ")
            ),
        );
        prompted = true;
    }
    prompted
}

enum Pass {
    Accepted,
    MoreWork,
    Aborted,
}

/// What a group validation keys staleness on: the leader's and every
/// member's completed cycle count.
type GroupSnapshot = Vec<(String, u64)>;

fn group_snapshot(ctx: &RuntimeContext, admin: &AgentHandle) -> GroupSnapshot {
    let mut snapshot = vec![(admin.name.clone(), admin.cycle_count())];
    if let Some(group) = admin.leads_group() {
        for member in validate::group_members(ctx, group) {
            snapshot.push((member.name.clone(), member.cycle_count()));
        }
    }
    snapshot
}

fn validation_pass(
    ctx: &Arc<RuntimeContext>,
    boss: &Arc<AgentHandle>,
    group_snapshots: &mut HashMap<String, GroupSnapshot>,
    round: u64,
) -> Pass {
    let mut admins: Vec<Arc<AgentHandle>> = ctx
        .registry
        .all()
        .into_iter()
        .filter(|a| !a.is_boss && !a.is_replaced() && a.leads_group().is_some())
        .collect();
    admins.sort_by(|a, b| b.depth.cmp(&a.depth).then_with(|| a.name.cmp(&b.name)));

    let mut revisions = 0usize;
    let mut level_start = 0usize;
    while level_start < admins.len() {
        let depth = admins[level_start].depth;
        let level_end = admins[level_start..]
            .iter()
            .position(|a| a.depth != depth)
            .map(|p| level_start + p)
            .unwrap_or(admins.len());
        let stale: Vec<(Arc<AgentHandle>, GroupSnapshot)> = admins[level_start..level_end]
            .iter()
            .filter_map(|admin| {
                let snapshot = group_snapshot(ctx, admin);
                (group_snapshots.get(&admin.name) != Some(&snapshot))
                    .then(|| (admin.clone(), snapshot))
            })
            .collect();
        level_start = level_end;

        // leaders at the same depth validate in parallel
        let results: Vec<(
            Arc<AgentHandle>,
            GroupSnapshot,
            Result<Verdict, ValidationError>,
        )> = std::thread::scope(|scope| {
            let handles: Vec<_> = stale
                .into_iter()
                .map(|(admin, snapshot)| {
                    scope.spawn(move || {
                        let _serial = ctx.serial.then(|| ctx.serial_token.lock());
                        let verdict = validate::validate_group(ctx, &admin, round);
                        (admin, snapshot, verdict)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("validator panicked"))
                .collect()
        });

        for (admin, snapshot, result) in results {
            match result {
                Ok(Verdict::Accept) => {
                    group_snapshots.insert(admin.name.clone(), snapshot);
                }
                Ok(Verdict::Revise(deficiencies)) => {
                    let prompted = validate::apply_revise(ctx, &deficiencies);
                    if prompted > 0 {
                        revisions += prompted;
                    } else {
                        // nothing actionable: record the verdict as final
                        group_snapshots.insert(admin.name.clone(), snapshot);
                    }
                }
                Err(ValidationError::Inconclusive(name)) => {
                    let _ = ctx.registry.post(
                        &ctx.events,
                        SUPERVISOR_SENDER,
                        &name,
                        "SUPERVISOR:FormatError your validation verdict was not understood. \
                         Reply with ACCEPT, or REVISE: followed by <agent_name>: <deficiency> lines.",
                    );
                    revisions += 1;
                }
                Err(ValidationError::Gateway(e)) => {
                    ctx.request_abort(&format!("model backend failed during validation: {e}"));
                    return Pass::Aborted;
                }
            }
        }
    }
    if revisions > 0 {
        return Pass::MoreWork;
    }

    let review = {
        let _serial = ctx.serial.then(|| ctx.serial_token.lock());
        validate::review_root(ctx, boss, round)
    };
    match review {
        Ok(Verdict::Accept) => Pass::Accepted,
        Ok(Verdict::Revise(deficiencies)) => {
            if validate::apply_revise(ctx, &deficiencies) == 0 {
                ctx.request_abort("the final review demanded revisions from no reachable agent");
                return Pass::Aborted;
            }
            Pass::MoreWork
        }
        Err(ValidationError::Inconclusive(_)) => {
            ctx.request_abort("escalation at root: the final review was inconclusive twice");
            Pass::Aborted
        }
        Err(ValidationError::Gateway(e)) => {
            ctx.request_abort(&format!("model backend failed during review: {e}"));
            Pass::Aborted
        }
    }
}

/// Merge-stage summary. Scripted runs use a deterministic digest of the
/// deliverable; live runs ask the Boss to write one.
fn aggregate_summary(
    ctx: &Arc<RuntimeContext>,
    boss: &Arc<AgentHandle>,
    files: &[DeliverableFile],
) -> String {
    let listing: Vec<String> = files.iter().map(|f| f.path.clone()).collect();
    if ctx.gateway.is_scripted() {
        return format!("deliverable files:\n{}", listing.join("\n"));
    }
    let request = ChatRequest {
        agent_name: boss.name.clone(),
        system_prompt: boss.system_prompt.clone(),
        context: vec![ContextMessage::new(
            SUPERVISOR_SENDER,
            format!(
                "MERGE REQUEST: the team's work was accepted. Write the final deliverable \
                 summary for the original task: what was built, where, and how to use it.\n\
                 Files:\n{}",
                listing.join("\n")
            ),
        )],
        tool_schemas: registry_schemas().to_vec(),
        temperature: ctx.config.temperature,
    };
    match ctx.complete_for(boss, &request, CallKind::Aggregate) {
        Ok(response) => response.text,
        Err(e) => {
            ctx.request_abort(&format!("model backend failed during merge: {e}"));
            format!("deliverable files:\n{}", listing.join("\n"))
        }
    }
}
