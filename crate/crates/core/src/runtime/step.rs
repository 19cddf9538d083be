//! One processing cycle: the drained batch goes in, verified messages and
//! workspace effects come out.
//!
//! Cycle shape:
//! 1. retrieve memory relevant to the batch and build the model context;
//! 2. run the function-call loop (model call, execute calls, feed the
//!    observations back) until the model stops calling tools, terminates,
//!    or hits the iteration cap;
//! 3. verify the final output, dispatch its messages, and remember the
//!    exchange.
//!
//! Failure detection (refusal, repetition, format, exec) hands off to the
//! supervisor; a failed cycle dispatches nothing.

use crate::context::RuntimeContext;
use crate::event::kind;
use crate::gateway::{CallKind, ChatRequest, ContextMessage};
use crate::runtime::{AgentHandle, Message};
use crate::supervisor::{self, CycleOutcome, FailureKind, Supervisor};
use crate::tools::{self, exec, parse, registry_schemas};
use serde_json::json;
use std::sync::atomic::Ordering;
use std::sync::Arc;

/// How the cycle ended, as seen by the agent loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CycleExit {
    Completed,
    /// The model backend is gone; the run is aborting and the thread should
    /// retire without touching the state machine again.
    Aborted,
}

fn batch_query(batch: &[Message]) -> String {
    batch
        .iter()
        .map(|m| format!("{}: {}", m.sender, m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn run_cycle(
    ctx: &Arc<RuntimeContext>,
    agent: &Arc<AgentHandle>,
    batch: &[Message],
) -> CycleExit {
    agent.cycles.fetch_add(1, Ordering::SeqCst);
    let query = batch_query(batch);

    let mut context: Vec<ContextMessage> = Vec::new();
    for entry in ctx.memory.retrieve(
        &agent.name,
        &query,
        ctx.config.n_relevant,
        ctx.config.k_latest,
    ) {
        context.push(ContextMessage::new("memory", &entry.text));
    }
    for msg in batch {
        context.push(ContextMessage::new(&msg.sender, &msg.text));
    }

    let mut final_text;
    let mut last_exec_ok: Option<bool> = None;
    let mut terminated = false;
    let mut iteration = 0u32;
    loop {
        iteration += 1;
        let request = ChatRequest {
            agent_name: agent.name.clone(),
            system_prompt: agent.system_prompt.clone(),
            context: context.clone(),
            tool_schemas: registry_schemas().to_vec(),
            temperature: ctx.config.temperature,
        };
        let response = match ctx.complete_for(agent, &request, CallKind::Cycle) {
            Ok(response) => response,
            Err(e) => {
                ctx.events.log(
                    &agent.name,
                    kind::FAILURE,
                    json!({"kind": "backend", "detail": e.to_string()}),
                );
                ctx.request_abort(&format!("model backend failed for {}: {e}", agent.name));
                return CycleExit::Aborted;
            }
        };
        final_text = response.text.clone();
        if response.parsed_calls.is_empty() {
            break;
        }
        for call in &response.parsed_calls {
            if ctx.supervisor.note_call(
                &agent.name,
                &call.fingerprint(),
                ctx.config.repetition_threshold,
            ) {
                ctx.supervisor.remediate(
                    ctx,
                    agent,
                    FailureKind::Repetition,
                    &format!(
                        "issued the same call {} times in a row",
                        ctx.config.repetition_threshold
                    ),
                );
            }
            let obs = exec::execute(ctx, agent, call);
            if call.tool == tools::EXEC_PYTHON_FILE || call.tool == tools::INPUT {
                last_exec_ok = Some(obs.ok);
            }
            if call.tool == tools::TERMINATE && obs.ok {
                terminated = true;
            }
            context.push(ContextMessage::new("tool", obs.render()));
            if terminated {
                break;
            }
        }
        if terminated {
            break;
        }
        if iteration >= ctx.config.max_function_call_iterations {
            ctx.supervisor.remediate(
                ctx,
                agent,
                FailureKind::IncompleteTodo,
                &format!(
                    "function-call loop exceeded {} iterations without finishing",
                    ctx.config.max_function_call_iterations
                ),
            );
            break;
        }
    }

    agent.set_state_response(&ctx.events);

    let parsed = parse::parse_messages(&final_text);
    for warning in &parsed.warnings {
        ctx.events.log(
            &agent.name,
            kind::PARSE_WARNING,
            json!({"reason": warning.reason, "snippet": warning.snippet}),
        );
    }

    // refusal replaces the agent outright: nothing it said is dispatched
    if Supervisor::is_refusal(&final_text, &ctx.config.refusal_patterns) {
        ctx.supervisor.remediate(
            ctx,
            agent,
            FailureKind::Refusal,
            "the agent refused its task",
        );
        log_verify(ctx, agent, false, Some("Refusal"), 0);
        remember(ctx, agent, batch, &final_text);
        return CycleExit::Completed;
    }

    if ctx
        .supervisor
        .note_response(&agent.name, &final_text, ctx.config.repetition_threshold)
    {
        ctx.supervisor.remediate(
            ctx,
            agent,
            FailureKind::Repetition,
            &format!(
                "produced the same response {} times in a row",
                ctx.config.repetition_threshold
            ),
        );
        log_verify(ctx, agent, false, Some("Repetition"), 0);
        remember(ctx, agent, batch, &final_text);
        return CycleExit::Completed;
    }

    let outcome = CycleOutcome {
        final_text: &final_text,
        outgoing: &parsed.messages,
        last_exec_ok,
    };
    match supervisor::verify_format(ctx, agent, &outcome) {
        Err((failure, detail)) => {
            ctx.supervisor.remediate(ctx, agent, failure, &detail);
            log_verify(ctx, agent, false, Some(failure.label()), 0);
        }
        Ok(()) => {
            let mut dispatched = 0usize;
            for msg in &parsed.messages {
                match ctx
                    .registry
                    .post(&ctx.events, &agent.name, &msg.to, &msg.text)
                {
                    Ok(seq) => {
                        dispatched += 1;
                        ctx.events.log(
                            &agent.name,
                            kind::DISPATCH,
                            json!({"to": msg.to, "seq": seq}),
                        );
                    }
                    Err(e) => {
                        // recipient vanished between verification and dispatch
                        ctx.events.log(
                            &agent.name,
                            kind::PARSE_WARNING,
                            json!({"reason": "undeliverable message", "snippet": e.to_string()}),
                        );
                    }
                }
            }
            log_verify(ctx, agent, true, None, dispatched);
        }
    }

    remember(ctx, agent, batch, &final_text);
    CycleExit::Completed
}

fn log_verify(
    ctx: &RuntimeContext,
    agent: &AgentHandle,
    ok: bool,
    failure: Option<&str>,
    dispatched: usize,
) {
    let mut detail = json!({"ok": ok, "dispatched": dispatched});
    if let Some(kind) = failure {
        detail["failure"] = json!(kind);
    }
    ctx.events.log(&agent.name, kind::VERIFY, detail);
}

/// Persist the exchange: what arrived, then what the agent concluded.
fn remember(ctx: &RuntimeContext, agent: &AgentHandle, batch: &[Message], final_text: &str) {
    for msg in batch {
        let _ = ctx
            .memory
            .append(&agent.name, &format!("{}: {}", msg.sender, msg.text));
    }
    if !final_text.trim().is_empty() {
        let _ = ctx
            .memory
            .append(&agent.name, &format!("{}: {}", agent.name, final_text));
    }
}
