//! Multi-level monitoring and remediation.
//!
//! Supervision watches three things: per-agent checklists (TODO files in
//! the workspace), per-cycle output format, and cross-cycle behaviour
//! patterns (repetition, refusals). When a failure is detected the
//! supervisor escalates gradually: a retry prompt to the agent itself (up
//! to a configurable budget per failure kind), then escalation to the
//! parent, and for refusals an immediate replacement recruit that inherits
//! the checklist and pending queue. Escalation past the root aborts the
//! run with a diagnostic.
//!
//! Supervisor messages are ordinary queue messages from the reserved
//! sender `supervisor`, prefixed `SUPERVISOR:<FailureKind>`, so agents
//! handle them with the same machinery as peer traffic.

pub mod checklist;
pub mod validate;

use crate::context::RuntimeContext;
use crate::event::kind;
use crate::runtime::{AgentHandle, SUPERVISOR_SENDER};
use crate::tools::parse::OutgoingMessage;
use parking_lot::Mutex;
use serde_json::json;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Failure taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    /// TERMINATE with open checklist items, a function-call loop overrun,
    /// or an idle agent sitting on an unfinished checklist.
    IncompleteTodo,
    /// The same call or response repeated too many times in a row.
    Repetition,
    /// The response matched a refusal pattern.
    Refusal,
    /// Undispatchable messages or an empty response.
    FormatError,
    /// The cycle's most recent execution observation failed.
    ExecError,
}

impl FailureKind {
    pub fn label(&self) -> &'static str {
        match self {
            FailureKind::IncompleteTodo => "IncompleteTodo",
            FailureKind::Repetition => "Repetition",
            FailureKind::Refusal => "Refusal",
            FailureKind::FormatError => "FormatError",
            FailureKind::ExecError => "ExecError",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// What the supervisor did about a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Remediation {
    RetryPrompt,
    EscalateToParent,
    RecruitReplacement,
    /// Escalation had nowhere to go; the run aborts.
    EscalationAtRoot,
}

impl Remediation {
    pub fn label(&self) -> &'static str {
        match self {
            Remediation::RetryPrompt => "RetryPrompt",
            Remediation::EscalateToParent => "EscalateToParent",
            Remediation::RecruitReplacement => "RecruitReplacement",
            Remediation::EscalationAtRoot => "EscalationAtRoot",
        }
    }
}

#[derive(Default)]
struct RepetitionState {
    last_call: Option<String>,
    call_run: u32,
    last_response: Option<String>,
    response_run: u32,
}

/// Supervisor bookkeeping: repetition runs and retry budgets.
pub struct Supervisor {
    repetition: Mutex<HashMap<String, RepetitionState>>,
    retries: Mutex<HashMap<(String, FailureKind), u32>>,
}

impl Supervisor {
    pub fn new() -> Self {
        Supervisor {
            repetition: Mutex::new(HashMap::new()),
            retries: Mutex::new(HashMap::new()),
        }
    }

    // -- detection ----------------------------------------------------------

    /// Track one executed call; fires when the run length hits the
    /// threshold (then resets so the failure fires once per streak).
    pub fn note_call(&self, agent: &str, fingerprint: &str, threshold: u32) -> bool {
        let mut map = self.repetition.lock();
        let state = map.entry(agent.to_string()).or_default();
        if state.last_call.as_deref() == Some(fingerprint) {
            state.call_run += 1;
        } else {
            state.last_call = Some(fingerprint.to_string());
            state.call_run = 1;
        }
        if state.call_run >= threshold {
            state.call_run = 0;
            state.last_call = None;
            true
        } else {
            false
        }
    }

    /// Track one final response text; same semantics as [`note_call`].
    pub fn note_response(&self, agent: &str, text: &str, threshold: u32) -> bool {
        let mut map = self.repetition.lock();
        let state = map.entry(agent.to_string()).or_default();
        if state.last_response.as_deref() == Some(text) {
            state.response_run += 1;
        } else {
            state.last_response = Some(text.to_string());
            state.response_run = 1;
        }
        if state.response_run >= threshold {
            state.response_run = 0;
            state.last_response = None;
            true
        } else {
            false
        }
    }

    /// Does the text match a configured refusal pattern (case-insensitive)?
    pub fn is_refusal(text: &str, patterns: &[String]) -> bool {
        let lower = text.to_lowercase();
        patterns
            .iter()
            .any(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
    }

    // -- remediation --------------------------------------------------------

    /// Handle a detected failure. Returns the action taken.
    pub fn remediate(
        &self,
        ctx: &Arc<RuntimeContext>,
        agent: &Arc<AgentHandle>,
        failure: FailureKind,
        detail: &str,
    ) -> Remediation {
        ctx.events.log(
            &agent.name,
            kind::FAILURE,
            json!({"kind": failure.label(), "detail": detail}),
        );
        let action = if failure == FailureKind::Refusal {
            self.recruit_replacement(ctx, agent, detail)
        } else {
            let attempts = {
                let mut retries = self.retries.lock();
                let counter = retries.entry((agent.name.clone(), failure)).or_insert(0);
                *counter += 1;
                *counter
            };
            if attempts <= ctx.config.retry_budget {
                let text = format!(
                    "SUPERVISOR:{failure} {detail} Address this and continue your task. \
                     (attempt {attempts} of {})",
                    ctx.config.retry_budget
                );
                let _ = ctx
                    .registry
                    .post(&ctx.events, SUPERVISOR_SENDER, &agent.name, &text);
                Remediation::RetryPrompt
            } else {
                self.retries.lock().remove(&(agent.name.clone(), failure));
                self.escalate(ctx, agent, failure, detail)
            }
        };
        ctx.events.log(
            &agent.name,
            kind::REMEDIATION,
            json!({"kind": failure.label(), "action": action.label()}),
        );
        action
    }

    fn escalate(
        &self,
        ctx: &Arc<RuntimeContext>,
        agent: &Arc<AgentHandle>,
        failure: FailureKind,
        detail: &str,
    ) -> Remediation {
        match agent.parent.as_deref() {
            Some(parent) => {
                let text = format!(
                    "SUPERVISOR:{failure} agent {} failed repeatedly: {detail} \
                     Intervene: give corrected instructions or recruit help.",
                    agent.name
                );
                let _ = ctx
                    .registry
                    .post(&ctx.events, SUPERVISOR_SENDER, parent, &text);
                Remediation::EscalateToParent
            }
            None => {
                ctx.request_abort(&format!(
                    "escalation at root: {} failed with {failure}: {detail}",
                    agent.name
                ));
                Remediation::EscalationAtRoot
            }
        }
    }

    /// Replace a refusing agent: clone its position, copy the checklist,
    /// move the pending queue, retire the original.
    fn recruit_replacement(
        &self,
        ctx: &Arc<RuntimeContext>,
        agent: &Arc<AgentHandle>,
        detail: &str,
    ) -> Remediation {
        let replacement = match ctx.spawn_replacement(agent) {
            Ok(handle) => handle,
            Err(e) => {
                // nothing else to do: escalate instead
                return self.escalate(
                    ctx,
                    agent,
                    FailureKind::Refusal,
                    &format!("{detail}; replacement failed: {e}"),
                );
            }
        };
        let _ = checklist::copy_checklist(&ctx.workspace, &agent.name, &replacement.name);
        // mark replaced before moving the queue: enqueues re-check the flag
        // under the mailbox lock, so nothing can strand in the old queue
        agent
            .replaced
            .store(true, std::sync::atomic::Ordering::SeqCst);
        ctx.registry
            .transfer_queue(&ctx.events, agent, &replacement);
        {
            // wake the replaced agent so its thread retires promptly
            let _mbox = agent.mbox.lock();
            agent.wake.notify_all();
        }
        ctx.events.log(
            &agent.name,
            kind::REPLACE,
            json!({"replacement": replacement.name, "detail": detail}),
        );
        let text = format!(
            "SUPERVISOR:Refusal you are taking over for {}. Its instructions are your system \
             prompt; see todo_{}.txt for outstanding work. Begin now.",
            agent.name, replacement.name
        );
        let _ = ctx
            .registry
            .post(&ctx.events, SUPERVISOR_SENDER, &replacement.name, &text);
        Remediation::RecruitReplacement
    }
}

impl Default for Supervisor {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Per-cycle format verification
// ---------------------------------------------------------------------------

/// Everything format verification needs to judge one finished cycle.
pub struct CycleOutcome<'a> {
    pub final_text: &'a str,
    pub outgoing: &'a [OutgoingMessage],
    /// `Some(false)` when the most recent exec observation of the cycle
    /// failed.
    pub last_exec_ok: Option<bool>,
}

/// Check a cycle's output: execution health, addressability of every
/// outgoing message, and non-emptiness. First violation wins.
pub fn verify_format(
    ctx: &RuntimeContext,
    agent: &AgentHandle,
    outcome: &CycleOutcome<'_>,
) -> Result<(), (FailureKind, String)> {
    if outcome.last_exec_ok == Some(false) {
        return Err((
            FailureKind::ExecError,
            "the most recent execution in this cycle failed".to_string(),
        ));
    }
    for msg in outcome.outgoing {
        let Some(rcpt) = ctx.registry.get(&msg.to).filter(|r| !r.is_replaced()) else {
            return Err((
                FailureKind::FormatError,
                format!("message addressed to unknown agent {}", msg.to),
            ));
        };
        if !ctx.registry.route_allowed(agent, &rcpt) {
            return Err((
                FailureKind::FormatError,
                format!("routing forbids messaging {}", msg.to),
            ));
        }
    }
    if outcome.final_text.trim().is_empty() {
        return Err((FailureKind::FormatError, "empty response".to_string()));
    }
    Ok(())
}
