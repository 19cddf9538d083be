//! Shared runtime context.
//!
//! One [`RuntimeContext`] is built per run and shared (via `Arc`) by every
//! agent thread, the tool executor, the supervisor and the orchestrator.
//! It owns the registry, the gateway, the workspace, the memory store, the
//! sandbox, the event log and the scheduling machinery (shutdown flag,
//! serial-execution token, thread handles).

use crate::config::RuntimeConfig;
use crate::event::{kind, EventLog};
use crate::gateway::{CallKind, ChatRequest, Gateway, GatewayError, ModelResponse};
use crate::memory::MemoryStore;
use crate::metrics::{StageClock, UsageLedger};
use crate::runtime::{run, AgentHandle, AgentRegistry, AgentSpec, SpawnError, BOSS_NAME};
use crate::supervisor::Supervisor;
use crate::tools::sandbox::{SandboxManager, SandboxPolicy};
use crate::workspace::Workspace;
use parking_lot::Mutex;
use serde_json::json;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

pub struct RuntimeContext {
    pub config: RuntimeConfig,
    /// Serialize all processing cycles behind one token (`--serial`).
    pub serial: bool,
    pub registry: AgentRegistry,
    pub gateway: Gateway,
    pub workspace: Arc<Workspace>,
    pub memory: MemoryStore,
    pub sandbox: SandboxManager,
    pub supervisor: Supervisor,
    pub events: Arc<EventLog>,
    pub ledger: Arc<UsageLedger>,
    pub clock: Arc<StageClock>,
    pub(crate) serial_token: Mutex<()>,
    pub(crate) shutdown: AtomicBool,
    pub(crate) abort_reason: Mutex<Option<String>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    /// Serializes spawn decisions (promotion + registration + launch).
    spawn_lock: Mutex<()>,
}

impl RuntimeContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: RuntimeConfig,
        serial: bool,
        gateway: Gateway,
        workspace: Arc<Workspace>,
        memory: MemoryStore,
        events: Arc<EventLog>,
        ledger: Arc<UsageLedger>,
        clock: Arc<StageClock>,
    ) -> Arc<Self> {
        let registry = AgentRegistry::new(config.max_agents);
        Arc::new(RuntimeContext {
            config,
            serial,
            registry,
            gateway,
            workspace,
            memory,
            sandbox: SandboxManager::new(),
            supervisor: Supervisor::new(),
            events,
            ledger,
            clock,
            serial_token: Mutex::new(()),
            shutdown: AtomicBool::new(false),
            abort_reason: Mutex::new(None),
            threads: Mutex::new(Vec::new()),
            spawn_lock: Mutex::new(()),
        })
    }

    /// Model call made on an agent's behalf, counted against that agent.
    pub fn complete_for(
        &self,
        agent: &AgentHandle,
        request: &ChatRequest,
        call: CallKind,
    ) -> Result<ModelResponse, GatewayError> {
        agent.call_counter.fetch_add(1, Ordering::SeqCst);
        self.gateway.complete(request, call)
    }

    /// Sandbox policy bound to this run's materialized file tree.
    pub fn sandbox_policy(&self) -> SandboxPolicy {
        SandboxPolicy {
            interpreter: self.config.sandbox.interpreter.clone(),
            workdir: self.workspace.files_dir(),
            exec_timeout: self.config.sandbox.exec_timeout,
            quiet_window: self.config.sandbox.quiet_window,
        }
    }

    /// Register an agent and launch its thread.
    pub fn spawn_agent(self: &Arc<Self>, spec: AgentSpec) -> Result<Arc<AgentHandle>, SpawnError> {
        let _guard = self.spawn_lock.lock();
        self.spawn_agent_locked(spec)
    }

    fn spawn_agent_locked(
        self: &Arc<Self>,
        spec: AgentSpec,
    ) -> Result<Arc<AgentHandle>, SpawnError> {
        if spec.depth > self.config.max_hierarchy_depth {
            return Err(SpawnError::MaxDepth(self.config.max_hierarchy_depth));
        }
        let detail = json!({
            "parent": spec.parent,
            "depth": spec.depth,
            "group": spec.group,
            "leads": spec.leads,
        });
        let handle = self.registry.register(spec)?;
        let mut enriched = detail;
        enriched["role"] = json!(handle.role().label());
        self.events.log(&handle.name, kind::SPAWN, enriched);
        let ctx = self.clone();
        let agent = handle.clone();
        let thread = std::thread::Builder::new()
            .name(format!("agent-{}", handle.name))
            .spawn(move || run::run_agent(ctx, agent))
            .expect("agent thread spawns");
        self.threads.lock().push(thread);
        Ok(handle)
    }

    /// Spawn the root agent.
    pub fn spawn_boss(
        self: &Arc<Self>,
        system_prompt: &str,
    ) -> Result<Arc<AgentHandle>, SpawnError> {
        let group = self.registry.mint_group();
        self.spawn_agent(AgentSpec {
            name: BOSS_NAME.to_string(),
            parent: None,
            depth: 0,
            group: None,
            leads: Some(group),
            system_prompt: system_prompt.to_string(),
            is_boss: true,
        })
    }

    /// Recruit a subordinate on behalf of `caller` (the `add_agent` tool).
    /// A first-time recruiter is promoted to admin of a fresh group.
    pub fn spawn_child(
        self: &Arc<Self>,
        caller: &Arc<AgentHandle>,
        name: &str,
        description: &str,
    ) -> Result<Arc<AgentHandle>, SpawnError> {
        let _guard = self.spawn_lock.lock();
        let depth = caller.depth + 1;
        if depth > self.config.max_hierarchy_depth {
            return Err(SpawnError::MaxDepth(self.config.max_hierarchy_depth));
        }
        let group = {
            let mut leads = caller.leads.lock();
            match *leads {
                Some(g) => g,
                None => {
                    let g = self.registry.mint_group();
                    *leads = Some(g);
                    g
                }
            }
        };
        self.spawn_agent_locked(AgentSpec {
            name: name.to_string(),
            parent: Some(caller.name.clone()),
            depth,
            group: Some(group),
            leads: None,
            system_prompt: description.to_string(),
            is_boss: false,
        })
    }

    /// Spawn a replacement that inherits the failed agent's position.
    /// Returns the new handle; queue transfer and checklist copying are the
    /// supervisor's job.
    pub fn spawn_replacement(
        self: &Arc<Self>,
        original: &Arc<AgentHandle>,
    ) -> Result<Arc<AgentHandle>, SpawnError> {
        let _guard = self.spawn_lock.lock();
        let mut n = 2;
        let name = loop {
            let candidate = format!("{}_{n}", original.name);
            if self.registry.get(&candidate).is_none() {
                break candidate;
            }
            n += 1;
        };
        self.spawn_agent_locked(AgentSpec {
            name,
            parent: original.parent.clone(),
            depth: original.depth,
            group: original.group,
            leads: original.leads_group(),
            system_prompt: original.system_prompt.clone(),
            is_boss: false,
        })
    }

    pub fn is_shutdown(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    /// Ask the orchestrator to abort the run (first reason wins).
    pub fn request_abort(&self, reason: &str) {
        let mut slot = self.abort_reason.lock();
        if slot.is_none() {
            *slot = Some(reason.to_string());
        }
    }

    pub fn abort_reason(&self) -> Option<String> {
        self.abort_reason.lock().clone()
    }

    /// Stop all agent threads and reap them.
    pub fn shutdown_and_join(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.registry.notify_all();
        let threads: Vec<JoinHandle<()>> = std::mem::take(&mut *self.threads.lock());
        for t in threads {
            let _ = t.join();
        }
        self.sandbox.kill_all();
    }
}
