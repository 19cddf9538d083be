//! Tool execution against the live run context.
//!
//! Every function call an agent emits lands here. Execution never panics
//! and never returns `Err`: failures become error observations so the
//! calling agent sees them in its next inference context.

use crate::context::RuntimeContext;
use crate::event::kind;
use crate::runtime::AgentHandle;
use crate::supervisor::{checklist, FailureKind};
use crate::tools::{self, FunctionCall, ToolObservation};
use crate::workspace::WriteOutcome;
use serde_json::json;
use std::path::Path;
use std::sync::Arc;

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Execute one function call on behalf of `caller`.
pub fn execute(
    ctx: &Arc<RuntimeContext>,
    caller: &Arc<AgentHandle>,
    call: &FunctionCall,
) -> ToolObservation {
    let obs = match call.tool.as_str() {
        tools::READ_FILE => read_file(ctx, caller, call),
        tools::WRITE_FILE => write_file(ctx, caller, call),
        tools::EXEC_PYTHON_FILE => exec_file(ctx, caller, call),
        tools::INPUT => feed_input(ctx, caller, call),
        tools::ADD_AGENT => add_agent(ctx, caller, call),
        tools::TERMINATE => terminate(ctx, caller),
        other => ToolObservation::err(other, format!("unknown tool {other}")),
    };
    ctx.events.log(
        &caller.name,
        kind::TOOL_CALL,
        json!({
            "tool": obs.tool,
            "ok": obs.ok,
            "detail": obs.output.chars().take(160).collect::<String>(),
        }),
    );
    obs
}

fn require<'c>(call: &'c FunctionCall, name: &str) -> Result<&'c str, ToolObservation> {
    call.arg(name)
        .ok_or_else(|| ToolObservation::err(&call.tool, format!("missing argument {name}")))
}

fn read_file(ctx: &RuntimeContext, caller: &AgentHandle, call: &FunctionCall) -> ToolObservation {
    let filename = match require(call, "filename") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    match ctx.workspace.read(filename) {
        Ok((content, head)) => {
            caller.set_ticket(filename, head);
            ToolObservation::ok(&call.tool, content)
        }
        Err(e) => ToolObservation::err(&call.tool, e.to_string()),
    }
}

fn write_file(ctx: &RuntimeContext, caller: &AgentHandle, call: &FunctionCall) -> ToolObservation {
    let filename = match require(call, "filename") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    let content = match require(call, "content") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    let allowed = &ctx.config.sandbox.writable_extensions;
    let extension = Path::new(filename).extension().and_then(|e| e.to_str());
    match extension {
        Some(ext) if allowed.iter().any(|a| a == ext) => {}
        _ => {
            return ToolObservation::err(
                &call.tool,
                format!(
                    "UnsupportedExtension: {filename} (writable extensions: {})",
                    allowed.join(", ")
                ),
            )
        }
    }
    let base = caller.ticket(filename);
    match ctx.workspace.write(filename, content, base.as_ref(), &caller.name) {
        Ok(WriteOutcome::Committed(hash)) => {
            caller.set_ticket(filename, hash.clone());
            ToolObservation::ok(&call.tool, format!("committed {filename} @ {}", short(&hash)))
        }
        Ok(WriteOutcome::Conflict(report)) => ToolObservation::err(
            &call.tool,
            format!(
                "WriteConflict on {}: the file changed since your copy (head {}). Nothing was \
                 written. Current content:\n{}\nRead the file, merge your changes, and write again.",
                report.path,
                short(&report.head_hash),
                report.head_content
            ),
        ),
        Err(e) => ToolObservation::err(&call.tool, e.to_string()),
    }
}

fn exec_file(ctx: &RuntimeContext, caller: &AgentHandle, call: &FunctionCall) -> ToolObservation {
    let filename = match require(call, "filename") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    if ctx.workspace.head(filename).is_none() {
        return ToolObservation::err(
            &call.tool,
            format!("cannot execute {filename}: not present in the shared workspace"),
        );
    }
    match ctx
        .sandbox
        .exec_file(&caller.name, &ctx.sandbox_policy(), filename)
    {
        Ok(result) => match result.status {
            Some(0) => ToolObservation::ok(&call.tool, result.output),
            Some(code) => ToolObservation::err(
                &call.tool,
                format!("{}\n[exit status {code}]", result.output),
            ),
            None => ToolObservation::ok(
                &call.tool,
                format!(
                    "{}\n[process is still running; use input to interact]",
                    result.output
                ),
            ),
        },
        Err(e) => ToolObservation::err(&call.tool, e.to_string()),
    }
}

fn feed_input(ctx: &RuntimeContext, caller: &AgentHandle, call: &FunctionCall) -> ToolObservation {
    let content = match require(call, "content") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    match ctx
        .sandbox
        .feed_input(&caller.name, &ctx.sandbox_policy(), content)
    {
        Ok(result) => match result.status {
            Some(0) | None => ToolObservation::ok(&call.tool, result.output),
            Some(code) => ToolObservation::err(
                &call.tool,
                format!("{}\n[exit status {code}]", result.output),
            ),
        },
        Err(e) => ToolObservation::err(&call.tool, e.to_string()),
    }
}

fn add_agent(
    ctx: &Arc<RuntimeContext>,
    caller: &Arc<AgentHandle>,
    call: &FunctionCall,
) -> ToolObservation {
    let name = match require(call, "name") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    let description = match require(call, "description") {
        Ok(v) => v,
        Err(obs) => return obs,
    };
    match ctx.spawn_child(caller, name, description) {
        Ok(child) => ToolObservation::ok(
            &call.tool,
            format!(
                "recruited {} into your group; send it instructions with a msg block",
                child.name
            ),
        ),
        Err(e) => ToolObservation::err(&call.tool, format!("SpawnRefused: {e}")),
    }
}

fn terminate(ctx: &Arc<RuntimeContext>, caller: &Arc<AgentHandle>) -> ToolObservation {
    let todo = checklist::read_checklist(&ctx.workspace, &caller.name);
    if !todo.is_complete() {
        let detail = format!(
            "TERMINATE rejected: todo_{}.txt still has open items: {}.",
            caller.name,
            todo.open_items().join("; ")
        );
        ctx.supervisor
            .remediate(ctx, caller, FailureKind::IncompleteTodo, &detail);
        return ToolObservation::err(tools::TERMINATE, detail);
    }
    // idempotent: a finished agent revived by new mail may terminate again
    if !caller
        .finished
        .swap(true, std::sync::atomic::Ordering::SeqCst)
    {
        ctx.events.log(&caller.name, kind::TERMINATE, json!({}));
    }
    ToolObservation::ok(tools::TERMINATE, "conversation ended")
}
