//! Result validation.
//!
//! When the system reaches message quiescence with complete checklists,
//! every group leader reviews its group's output through a model call made
//! on the leader's behalf, and the Boss performs the same review across
//! groups at the root. The verdict protocol is strict:
//!
//! - a verdict beginning `ACCEPT` accepts the group's work;
//! - a verdict beginning `REVISE:` lists deficiencies, one per line, as
//!   `<agent_name>: <deficiency>`; each named agent gets the deficiency
//!   appended to its checklist and a supervisor prompt to fix it;
//! - anything else is inconclusive: retried once, then escalated.

use crate::context::RuntimeContext;
use crate::event::kind;
use crate::gateway::{CallKind, ChatRequest, ContextMessage, GatewayError};
use crate::runtime::{AgentHandle, SUPERVISOR_SENDER};
use crate::supervisor::checklist;
use crate::tools::registry_schemas;
use serde_json::json;
use std::sync::Arc;

/// One `<agent>: <deficiency>` line from a REVISE verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deficiency {
    pub agent: String,
    pub text: String,
}

/// Parsed validation verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Revise(Vec<Deficiency>),
}

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("validation by {0} was inconclusive twice")]
    Inconclusive(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Parse a raw verdict. `fallback_agent` owns deficiencies that carry no
/// agent prefix. Returns `None` when the text fits neither protocol arm.
pub fn parse_verdict(text: &str, fallback_agent: &str) -> Option<Verdict> {
    let trimmed = text.trim_start();
    if trimmed.starts_with("ACCEPT") {
        return Some(Verdict::Accept);
    }
    if let Some(rest) = trimmed.strip_prefix("REVISE:") {
        let mut deficiencies = Vec::new();
        for line in rest.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once(':') {
                Some((name, text)) if !name.trim().is_empty() && !text.trim().is_empty() => {
                    deficiencies.push(Deficiency {
                        agent: name.trim().to_string(),
                        text: text.trim().to_string(),
                    });
                }
                _ => deficiencies.push(Deficiency {
                    agent: fallback_agent.to_string(),
                    text: line.to_string(),
                }),
            }
        }
        if deficiencies.is_empty() {
            deficiencies.push(Deficiency {
                agent: fallback_agent.to_string(),
                text: "validation requested revision without detail".to_string(),
            });
        }
        return Some(Verdict::Revise(deficiencies));
    }
    None
}

/// Live (unreplaced) members of a group, sorted by name.
pub fn group_members(ctx: &RuntimeContext, group: u64) -> Vec<Arc<AgentHandle>> {
    let mut members: Vec<_> = ctx
        .registry
        .all()
        .into_iter()
        .filter(|a| a.group == Some(group) && !a.is_replaced())
        .collect();
    members.sort_by(|a, b| a.name.cmp(&b.name));
    members
}

fn validation_request(
    ctx: &RuntimeContext,
    reviewer: &AgentHandle,
    members: &[Arc<AgentHandle>],
    scope: &str,
    round: u64,
) -> ChatRequest {
    let mut body = format!(
        "VALIDATION REQUEST (round {round})\nReview the completed {scope} before delivery.\n"
    );
    body.push_str("Members:\n");
    for member in members {
        let cl = checklist::read_checklist(&ctx.workspace, &member.name);
        let status = if cl.is_complete() {
            "checklist complete".to_string()
        } else {
            format!("open items: {}", cl.open_items().join("; "))
        };
        body.push_str(&format!("- {} ({status})\n", member.name));
    }
    body.push_str("Workspace files:\n");
    for path in ctx.workspace.heads().keys() {
        body.push_str(&format!("- {path}\n"));
    }
    body.push_str(
        "Reply with ACCEPT if the work meets the task requirements. Otherwise reply with \
         REVISE: followed by one line per problem in the form <agent_name>: <deficiency>.",
    );
    ChatRequest {
        agent_name: reviewer.name.clone(),
        system_prompt: reviewer.system_prompt.clone(),
        context: vec![ContextMessage::new(SUPERVISOR_SENDER, body)],
        tool_schemas: registry_schemas().to_vec(),
        temperature: ctx.config.temperature,
    }
}

fn call_for_verdict(
    ctx: &Arc<RuntimeContext>,
    reviewer: &Arc<AgentHandle>,
    members: &[Arc<AgentHandle>],
    scope: &str,
    round: u64,
    call: CallKind,
) -> Result<Verdict, ValidationError> {
    let request = validation_request(ctx, reviewer, members, scope, round);
    // inconclusive verdicts get exactly one retry
    for attempt in 0..2 {
        let response = ctx.complete_for(reviewer, &request, call)?;
        if let Some(verdict) = parse_verdict(&response.text, &reviewer.name) {
            ctx.events.log(
                &reviewer.name,
                kind::VALIDATION,
                json!({
                    "round": round,
                    "scope": scope,
                    "verdict": match &verdict { Verdict::Accept => "accept", Verdict::Revise(_) => "revise" },
                    "attempt": attempt,
                }),
            );
            return Ok(verdict);
        }
        ctx.events.log(
            &reviewer.name,
            kind::VALIDATION,
            json!({"round": round, "scope": scope, "verdict": "inconclusive", "attempt": attempt}),
        );
    }
    Err(ValidationError::Inconclusive(reviewer.name.clone()))
}

/// Ask an admin to validate its group.
pub fn validate_group(
    ctx: &Arc<RuntimeContext>,
    admin: &Arc<AgentHandle>,
    round: u64,
) -> Result<Verdict, ValidationError> {
    let members = match admin.leads_group() {
        Some(group) => group_members(ctx, group),
        None => Vec::new(),
    };
    call_for_verdict(
        ctx,
        admin,
        &members,
        "work of your group",
        round,
        CallKind::Validation,
    )
}

/// Ask the Boss to review all groups at the root.
pub fn review_root(
    ctx: &Arc<RuntimeContext>,
    boss: &Arc<AgentHandle>,
    round: u64,
) -> Result<Verdict, ValidationError> {
    let mut members: Vec<_> = ctx
        .registry
        .all()
        .into_iter()
        .filter(|a| !a.is_boss && !a.is_replaced())
        .collect();
    members.sort_by(|a, b| a.name.cmp(&b.name));
    call_for_verdict(
        ctx,
        boss,
        &members,
        "deliverable across all groups",
        round,
        CallKind::Review,
    )
}

/// Deliver a REVISE verdict: append each deficiency to the named agent's
/// checklist and prompt the agent. Returns how many agents were prompted.
pub fn apply_revise(ctx: &Arc<RuntimeContext>, deficiencies: &[Deficiency]) -> usize {
    let mut prompted = 0;
    for deficiency in deficiencies {
        let Some(target) = ctx
            .registry
            .get(&deficiency.agent)
            .filter(|a| !a.is_replaced())
        else {
            ctx.events.log(
                &deficiency.agent,
                kind::PARSE_WARNING,
                json!({"reason": "REVISE names unknown agent", "snippet": deficiency.text}),
            );
            continue;
        };
        let _ = checklist::append_item(&ctx.workspace, &target.name, &deficiency.text);
        let text = format!(
            "SUPERVISOR:Validation REVISE: {} Fix this, update todo_{}.txt, and TERMINATE when done.",
            deficiency.text, target.name
        );
        let _ = ctx
            .registry
            .post(&ctx.events, SUPERVISOR_SENDER, &target.name, &text);
        prompted += 1;
    }
    prompted
}
