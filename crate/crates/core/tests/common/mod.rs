#![allow(dead_code)]

use mega_core::config::RuntimeConfig;
use mega_core::gateway::scripted::ScriptedScenario;
use mega_core::orchestrator::{self, BackendChoice, RunOptions, RunSummary};
use std::path::Path;

pub const GOBANG_META: &str = include_str!("../fixtures/gobang_meta.txt");
pub const GOBANG_SCENARIO: &str = include_str!("../fixtures/gobang_scenario.json");

pub fn test_config() -> RuntimeConfig {
    RuntimeConfig::test_profile()
}

pub fn gobang_scenario() -> ScriptedScenario {
    ScriptedScenario::from_json(GOBANG_SCENARIO).expect("fixture parses")
}

pub fn run_scripted(
    meta: &str,
    scenario: ScriptedScenario,
    config: RuntimeConfig,
    run_dir: &Path,
) -> RunSummary {
    run_with(meta, scenario, config, run_dir, false)
}

pub fn run_with(
    meta: &str,
    scenario: ScriptedScenario,
    config: RuntimeConfig,
    run_dir: &Path,
    serial: bool,
) -> RunSummary {
    orchestrator::run(
        meta,
        RunOptions {
            config,
            backend: BackendChoice::Scripted(scenario),
            run_dir: run_dir.to_path_buf(),
            log_path: None,
            serial,
        },
    )
    .expect("run finishes")
}

/// One-employee decomposition: the Boss recruits `name` and starts it.
pub fn solo_decomposition(name: &str, prompt: &str) -> String {
    format!(
        "One teammate covers this.\n<employee name=\"{name}\">{prompt}</employee>\n<beginner>{name}</beginner>"
    )
}

/// Count events of a kind in a log file, optionally filtered by agent.
pub fn count_events(log: &Path, kind: &str, agent: Option<&str>) -> usize {
    mega_core::replay::read_log(log)
        .expect("log parses")
        .iter()
        .filter(|e| e.record.event == kind && agent.is_none_or(|a| e.record.agent == a))
        .count()
}

// ---------------------------------------------------------------------------
// Raw runtime rig for schedule randomization
// ---------------------------------------------------------------------------

use mega_core::context::RuntimeContext;
use mega_core::event::{kind as event_kind, EventLog};
use mega_core::gateway::scripted::ScriptedBackend;
use mega_core::gateway::Gateway;
use mega_core::memory::MemoryStore;
use mega_core::metrics::{StageClock, UsageLedger};
use mega_core::runtime::{AgentSpec, SUPERVISOR_SENDER};
use mega_core::workspace::Workspace;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// A live runtime with `agent_count` scripted agents and no orchestrator,
/// for driving the state machine directly.
pub struct TestRig {
    pub ctx: Arc<RuntimeContext>,
    pub log_path: PathBuf,
    _dir: tempfile::TempDir,
}

pub fn rig(agent_count: usize, default_latency: Option<Duration>) -> TestRig {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.jsonl");
    let mut config = RuntimeConfig::test_profile();
    config.poll_interval = Duration::from_millis(1);

    let mut scenario = ScriptedScenario::new("Nothing further.");
    if let Some(latency) = default_latency {
        scenario.set_default_latency(latency);
    }
    let events = Arc::new(EventLog::create(&log_path).unwrap());
    let ledger = Arc::new(UsageLedger::new());
    let clock = Arc::new(StageClock::new());
    let gateway = Gateway::new(
        Arc::new(ScriptedBackend::new(scenario)),
        ledger.clone(),
        clock.clone(),
        events.clone(),
    );
    let workspace = Arc::new(Workspace::open(&dir.path().join("workspace")).unwrap());
    let memory = MemoryStore::open(&dir.path().join("memory")).unwrap();
    let ctx = RuntimeContext::new(
        config, false, gateway, workspace, memory, events, ledger, clock,
    );

    let group = ctx.registry.mint_group();
    for i in 0..agent_count {
        ctx.spawn_agent(AgentSpec {
            name: format!("agent{i}"),
            parent: None,
            depth: 1,
            group: Some(group),
            leads: None,
            system_prompt: "You process whatever arrives.".to_string(),
            is_boss: false,
        })
        .expect("rig agent spawns");
    }
    TestRig {
        ctx,
        log_path,
        _dir: dir,
    }
}

impl TestRig {
    pub fn post(&self, recipient: &str, text: &str) {
        self.ctx
            .registry
            .post(&self.ctx.events, SUPERVISOR_SENDER, recipient, text)
            .expect("rig post succeeds");
    }

    /// Block until nothing is queued or mid-cycle, then stamp the log with
    /// a completion marker and stop every thread.
    pub fn finish(&self) {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if self.ctx.registry.is_quiescent() {
                std::thread::sleep(Duration::from_millis(2));
                if self.ctx.registry.is_quiescent() {
                    break;
                }
            }
            assert!(Instant::now() < deadline, "rig did not quiesce");
            std::thread::sleep(Duration::from_millis(1));
        }
        self.ctx.events.log(
            "orchestrator",
            event_kind::RUN_COMPLETE,
            serde_json::json!({}),
        );
        self.ctx.shutdown_and_join();
    }
}

/// Drive a rig with `posts` (recipient index, pre-post delay in
/// microseconds) split round-robin across `drivers` concurrent threads.
pub fn run_flood(agent_count: usize, posts: &[(usize, u64)], drivers: usize) -> TestRig {
    let rig = rig(agent_count, None);
    let drivers = drivers.max(1);
    std::thread::scope(|scope| {
        for t in 0..drivers {
            let rig = &rig;
            let chunk: Vec<(usize, u64)> = posts.iter().skip(t).step_by(drivers).copied().collect();
            scope.spawn(move || {
                for (n, (idx, delay_us)) in chunk.into_iter().enumerate() {
                    std::thread::sleep(Duration::from_micros(delay_us));
                    rig.post(
                        &format!("agent{}", idx % agent_count),
                        &format!("note {t}-{n}"),
                    );
                }
            });
        }
    });
    rig.finish();
    rig
}

/// Oracle for schedule legality and message conservation, independent of
/// the replay validator's bookkeeping:
/// - the log passes full replay validation;
/// - per agent, the concatenated batch seqs equal the enqueue seqs in
///   order (no loss, no duplication, no reordering);
/// - every batch has exactly one verification.
pub fn assert_lossless(log: &Path) -> mega_core::replay::ReplaySummary {
    let events = mega_core::replay::read_log(log).expect("log parses");
    let summary = mega_core::replay::validate(&events).expect("no protocol violations");

    let mut enqueued: HashMap<String, Vec<u64>> = HashMap::new();
    let mut batched: HashMap<String, Vec<u64>> = HashMap::new();
    let mut batches: HashMap<String, usize> = HashMap::new();
    let mut verifies: HashMap<String, usize> = HashMap::new();
    for e in &events {
        let agent = e.record.agent.clone();
        match e.record.event.as_str() {
            event_kind::ENQUEUE => {
                enqueued
                    .entry(agent)
                    .or_default()
                    .push(e.record.detail["seq"].as_u64().unwrap());
            }
            event_kind::BATCH => {
                let seqs = e.record.detail["seqs"].as_array().unwrap();
                batched
                    .entry(agent.clone())
                    .or_default()
                    .extend(seqs.iter().map(|v| v.as_u64().unwrap()));
                *batches.entry(agent).or_default() += 1;
            }
            event_kind::VERIFY => *verifies.entry(agent).or_default() += 1,
            _ => {}
        }
    }
    assert_eq!(
        enqueued, batched,
        "batches must conserve enqueue order exactly"
    );
    assert_eq!(batches, verifies, "each batch is verified exactly once");
    summary
}
