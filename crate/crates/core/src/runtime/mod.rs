//! Agent runtime: handles, mailboxes, routing, and the state machine.
//!
//! Every agent is a [`AgentHandle`] owned by the [`AgentRegistry`] and
//! driven by its own thread ([`run`]). The lifecycle is a strict state
//! machine:
//!
//! ```text
//! Idle -> Processing      queue became non-empty
//! Processing -> Response  inference (and tool use) finished
//! Response -> Processing  queue non-empty again
//! Response -> Idle        queue empty
//! ```
//!
//! Messages arriving while an agent is Processing stay queued and are
//! drained as the *next* batch; a batch is always the entire queue at
//! drain time. Routing follows the hierarchy: Ordinary agents reach their
//! own group and their admin, Admins reach their group, other admins and
//! their parent, the Boss reaches admins. The reserved sender
//! `supervisor` bypasses routing.

pub mod run;
pub mod step;

use crate::event::{kind, EventLog};
use crate::workspace::CommitHash;
use parking_lot::{Condvar, Mutex, RwLock};
use serde_json::json;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

/// Reserved sender name for supervision traffic; never a real agent.
pub const SUPERVISOR_SENDER: &str = "supervisor";
/// The root agent's fixed name.
pub const BOSS_NAME: &str = "Boss";

/// Effective role, derived from position and recruiting history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Boss,
    Admin,
    Ordinary,
}

impl AgentRole {
    pub fn label(&self) -> &'static str {
        match self {
            AgentRole::Boss => "boss",
            AgentRole::Admin => "admin",
            AgentRole::Ordinary => "ordinary",
        }
    }
}

/// The three lifecycle states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentState {
    Idle,
    Processing,
    Response,
}

impl AgentState {
    pub fn label(&self) -> &'static str {
        match self {
            AgentState::Idle => "idle",
            AgentState::Processing => "processing",
            AgentState::Response => "response",
        }
    }
}

/// One queued message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: String,
    pub recipient: String,
    pub text: String,
    /// Global monotone sequence number, assigned at enqueue.
    pub seq: u64,
}

pub(crate) struct Mailbox {
    pub state: AgentState,
    pub queue: VecDeque<Message>,
}

/// One agent. Shared behind `Arc`; the mailbox mutex also guards state.
pub struct AgentHandle {
    pub name: String,
    pub parent: Option<String>,
    /// Distance from the Boss (which sits at depth 0).
    pub depth: usize,
    /// Membership group (the group of the agent's recruiter). `None` only
    /// for the Boss.
    pub group: Option<u64>,
    pub system_prompt: String,
    pub(crate) is_boss: bool,
    /// Group this agent leads, if it has ever recruited (or was spawned as
    /// an admin).
    pub(crate) leads: Mutex<Option<u64>>,
    pub(crate) mbox: Mutex<Mailbox>,
    pub(crate) wake: Condvar,
    pub(crate) finished: AtomicBool,
    pub(crate) replaced: AtomicBool,
    /// Model calls made on this agent's behalf.
    pub(crate) call_counter: AtomicU64,
    /// Completed processing cycles; drives validation staleness.
    pub(crate) cycles: AtomicU64,
    /// Write tickets: last seen commit hash per workspace path.
    pub(crate) tickets: Mutex<HashMap<String, CommitHash>>,
}

impl AgentHandle {
    pub fn role(&self) -> AgentRole {
        if self.is_boss {
            AgentRole::Boss
        } else if self.leads.lock().is_some() {
            AgentRole::Admin
        } else {
            AgentRole::Ordinary
        }
    }

    pub fn state(&self) -> AgentState {
        self.mbox.lock().state
    }

    pub fn queue_len(&self) -> usize {
        self.mbox.lock().queue.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished.load(Ordering::SeqCst)
    }

    pub fn is_replaced(&self) -> bool {
        self.replaced.load(Ordering::SeqCst)
    }

    /// Group this agent leads, if any.
    pub fn leads_group(&self) -> Option<u64> {
        *self.leads.lock()
    }

    pub fn call_count(&self) -> u64 {
        self.call_counter.load(Ordering::SeqCst)
    }

    pub fn cycle_count(&self) -> u64 {
        self.cycles.load(Ordering::SeqCst)
    }

    /// Remember a write ticket for a path.
    pub fn set_ticket(&self, path: &str, hash: CommitHash) {
        self.tickets.lock().insert(path.to_string(), hash);
    }

    pub fn ticket(&self, path: &str) -> Option<CommitHash> {
        self.tickets.lock().get(path).cloned()
    }

    /// Processing -> Response, logged. Called once per cycle when the
    /// function-call loop ends.
    pub(crate) fn set_state_response(&self, events: &EventLog) {
        let from = {
            let mut mbox = self.mbox.lock();
            let from = mbox.state;
            mbox.state = AgentState::Response;
            from
        };
        events.log(
            &self.name,
            kind::STATE,
            json!({"from": from.label(), "to": AgentState::Response.label()}),
        );
    }
}

/// Everything needed to register one agent.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub name: String,
    pub parent: Option<String>,
    pub depth: usize,
    pub group: Option<u64>,
    /// `Some` spawns the agent as an admin leading that group.
    pub leads: Option<u64>,
    pub system_prompt: String,
    pub is_boss: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SpawnError {
    #[error("agent name {0:?} is invalid: names are non-empty, contain no whitespace, and {1}")]
    InvalidName(String, &'static str),
    #[error("agent name {0} already exists")]
    DuplicateName(String),
    #[error("agent limit reached ({0})")]
    MaxAgents(usize),
    #[error("hierarchy depth limit reached ({0})")]
    MaxDepth(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum PostError {
    #[error("unknown recipient {0}")]
    UnknownRecipient(String),
    #[error("routing forbidden: {from} may not message {to}")]
    RoutingForbidden { from: String, to: String },
}

/// The agent table plus the counters that define quiescence.
pub struct AgentRegistry {
    agents: RwLock<AgentTable>,
    msg_seq: AtomicU64,
    group_seq: AtomicU64,
    max_agents: usize,
    /// Messages enqueued but not yet drained into a batch.
    pub(crate) pending: AtomicI64,
    /// Agents currently inside a processing cycle.
    pub(crate) processing: AtomicI64,
}

struct AgentTable {
    by_name: HashMap<String, Arc<AgentHandle>>,
    order: Vec<String>,
}

impl AgentRegistry {
    pub fn new(max_agents: usize) -> Self {
        AgentRegistry {
            agents: RwLock::new(AgentTable {
                by_name: HashMap::new(),
                order: Vec::new(),
            }),
            msg_seq: AtomicU64::new(0),
            group_seq: AtomicU64::new(0),
            max_agents,
            pending: AtomicI64::new(0),
            processing: AtomicI64::new(0),
        }
    }

    pub fn mint_group(&self) -> u64 {
        self.group_seq.fetch_add(1, Ordering::SeqCst)
    }

    pub fn get(&self, name: &str) -> Option<Arc<AgentHandle>> {
        self.agents.read().by_name.get(name).cloned()
    }

    /// All agents in spawn order (including finished and replaced ones).
    pub fn all(&self) -> Vec<Arc<AgentHandle>> {
        let table = self.agents.read();
        table
            .order
            .iter()
            .map(|n| table.by_name[n].clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.agents.read().order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a new agent in Idle state. Name rules: non-empty, no
    /// whitespace, unique, and not the reserved supervisor name.
    pub fn register(&self, spec: AgentSpec) -> Result<Arc<AgentHandle>, SpawnError> {
        validate_agent_name(&spec.name)?;
        let mut table = self.agents.write();
        if table.by_name.contains_key(&spec.name) {
            return Err(SpawnError::DuplicateName(spec.name));
        }
        if table.order.len() >= self.max_agents {
            return Err(SpawnError::MaxAgents(self.max_agents));
        }
        let handle = Arc::new(AgentHandle {
            name: spec.name.clone(),
            parent: spec.parent,
            depth: spec.depth,
            group: spec.group,
            system_prompt: spec.system_prompt,
            is_boss: spec.is_boss,
            leads: Mutex::new(spec.leads),
            mbox: Mutex::new(Mailbox {
                state: AgentState::Idle,
                queue: VecDeque::new(),
            }),
            wake: Condvar::new(),
            finished: AtomicBool::new(false),
            replaced: AtomicBool::new(false),
            call_counter: AtomicU64::new(0),
            cycles: AtomicU64::new(0),
            tickets: Mutex::new(HashMap::new()),
        });
        table.by_name.insert(spec.name.clone(), handle.clone());
        table.order.push(spec.name);
        Ok(handle)
    }

    /// May `sender` message `recipient` under the hierarchy policy?
    pub fn route_allowed(&self, sender: &AgentHandle, recipient: &AgentHandle) -> bool {
        if sender.name == recipient.name {
            // self-messages serve no purpose and are treated as misroutes
            return false;
        }
        match sender.role() {
            AgentRole::Boss => recipient.role() == AgentRole::Admin,
            AgentRole::Admin => {
                let leads = sender.leads_group();
                (recipient.group.is_some() && recipient.group == leads)
                    || recipient.role() == AgentRole::Admin
                    || sender.parent.as_deref() == Some(recipient.name.as_str())
            }
            AgentRole::Ordinary => {
                (recipient.group.is_some() && recipient.group == sender.group)
                    || (sender.group.is_some() && recipient.leads_group() == sender.group)
            }
        }
    }

    /// Enqueue a message. Routing is enforced unless the sender is the
    /// reserved supervisor name. A finished recipient is revived.
    pub fn post(
        &self,
        events: &EventLog,
        sender: &str,
        recipient: &str,
        text: &str,
    ) -> Result<u64, PostError> {
        let rcpt = self
            .get(recipient)
            .filter(|r| !r.is_replaced())
            .ok_or_else(|| PostError::UnknownRecipient(recipient.to_string()))?;
        if sender != SUPERVISOR_SENDER {
            let snd = self
                .get(sender)
                .ok_or_else(|| PostError::UnknownRecipient(sender.to_string()))?;
            if !self.route_allowed(&snd, &rcpt) {
                return Err(PostError::RoutingForbidden {
                    from: sender.to_string(),
                    to: recipient.to_string(),
                });
            }
        }
        self.enqueue_unchecked(events, sender, &rcpt, text, None)
    }

    /// Enqueue without routing checks (supervisor transfers). `transfer`
    /// names the original recipient and sequence when a queue is moved to a
    /// replacement agent. The replaced re-check under the mailbox lock keeps
    /// messages from stranding in a queue that was already transferred away.
    pub(crate) fn enqueue_unchecked(
        &self,
        events: &EventLog,
        sender: &str,
        rcpt: &Arc<AgentHandle>,
        text: &str,
        transfer: Option<(&str, u64)>,
    ) -> Result<u64, PostError> {
        let mut mbox = rcpt.mbox.lock();
        if rcpt.is_replaced() {
            return Err(PostError::UnknownRecipient(rcpt.name.clone()));
        }
        let seq = self.msg_seq.fetch_add(1, Ordering::SeqCst);
        if rcpt.finished.swap(false, Ordering::SeqCst) {
            events.log(&rcpt.name, kind::REVIVE, json!({"by": sender}));
        }
        mbox.queue.push_back(Message {
            sender: sender.to_string(),
            recipient: rcpt.name.clone(),
            text: text.to_string(),
            seq,
        });
        self.pending.fetch_add(1, Ordering::SeqCst);
        let mut detail = json!({"from": sender, "to": rcpt.name, "seq": seq});
        if let Some((orig, orig_seq)) = transfer {
            detail["transfer_from"] = json!(orig);
            detail["orig_seq"] = json!(orig_seq);
        }
        events.log(&rcpt.name, kind::ENQUEUE, detail);
        rcpt.wake.notify_one();
        Ok(seq)
    }

    /// Move every queued message from `from` to `to` (replacement flow).
    /// `from` must already be marked replaced so no new mail can land in its
    /// queue while it drains.
    pub(crate) fn transfer_queue(
        &self,
        events: &EventLog,
        from: &Arc<AgentHandle>,
        to: &Arc<AgentHandle>,
    ) {
        debug_assert!(from.is_replaced());
        let drained: Vec<Message> = {
            let mut mbox = from.mbox.lock();
            let drained: Vec<Message> = mbox.queue.drain(..).collect();
            self.pending
                .fetch_sub(drained.len() as i64, Ordering::SeqCst);
            drained
        };
        for msg in drained {
            // the freshly spawned replacement cannot itself be replaced yet
            let _ = self.enqueue_unchecked(
                events,
                &msg.sender,
                to,
                &msg.text,
                Some((&from.name, msg.seq)),
            );
        }
    }

    /// True when no message is queued anywhere and no agent is mid-cycle.
    pub fn is_quiescent(&self) -> bool {
        self.processing.load(Ordering::SeqCst) == 0 && self.pending.load(Ordering::SeqCst) == 0
    }

    /// Wake every agent thread (shutdown broadcast).
    pub fn notify_all(&self) {
        for agent in self.all() {
            let _mbox = agent.mbox.lock();
            agent.wake.notify_all();
        }
    }
}

/// Agent-name rules shared by the registry and the meta-prompt parser.
pub fn validate_agent_name(name: &str) -> Result<(), SpawnError> {
    if name.is_empty() {
        return Err(SpawnError::InvalidName(
            name.to_string(),
            "must not be empty",
        ));
    }
    if name.chars().any(|c| c.is_whitespace()) {
        return Err(SpawnError::InvalidName(
            name.to_string(),
            "must not contain whitespace",
        ));
    }
    if name == SUPERVISOR_SENDER {
        return Err(SpawnError::InvalidName(
            name.to_string(),
            "the supervisor name is reserved",
        ));
    }
    Ok(())
}
