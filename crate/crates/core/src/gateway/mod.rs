//! Model gateway: one entry point for every model call.
//!
//! [`Gateway::complete`] sends a [`ChatRequest`] to the configured backend,
//! measures latency, records token usage in the stage-labelled ledger and
//! the event log, and parses structured function calls out of the response
//! text. Nothing else in the runtime talks to a backend directly, so
//! "one ledger entry per model call" holds by construction.
//!
//! Two backends exist: a deterministic scripted backend for tests and
//! replays ([`scripted`]) and an HTTP chat-completion client ([`http`]).

pub mod http;
pub mod scripted;

use crate::event::{kind, EventLog};
use crate::metrics::{MetricsError, StageClock, TokenUsage, UsageLedger};
use crate::tools::parse;
use crate::tools::{FunctionCall, ToolSchema};
use serde_json::json;
use std::sync::Arc;
use std::time::Instant;

/// One prior message shown to the model, labelled with its speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMessage {
    pub speaker: String,
    pub text: String,
}

impl ContextMessage {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        ContextMessage {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// A fully-specified model call.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    /// Agent on whose behalf the call is made (ledger attribution and
    /// scripted scenario keying).
    pub agent_name: String,
    pub system_prompt: String,
    /// Ordered prior messages: memory first, then the current batch.
    pub context: Vec<ContextMessage>,
    pub tool_schemas: Vec<ToolSchema>,
    pub temperature: f32,
}

/// What the model said, with structured calls already recovered.
#[derive(Debug, Clone)]
pub struct ModelResponse {
    pub text: String,
    pub parsed_calls: Vec<FunctionCall>,
    pub usage: TokenUsage,
}

/// Why a model call was made; replay validation exempts everything except
/// `Cycle` from the "model calls only while Processing" rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    /// Inside an agent's processing cycle.
    Cycle,
    /// Boss decomposition at bootstrap.
    Bootstrap,
    /// Admin group validation.
    Validation,
    /// Boss root review.
    Review,
    /// Deliverable summary at merge time.
    Aggregate,
}

impl CallKind {
    pub fn label(&self) -> &'static str {
        match self {
            CallKind::Cycle => "cycle",
            CallKind::Bootstrap => "bootstrap",
            CallKind::Validation => "validation",
            CallKind::Review => "review",
            CallKind::Aggregate => "aggregate",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error(transparent)]
    Ledger(#[from] MetricsError),
}

/// Raw text + usage as produced by a backend.
pub type InferOutput = (String, TokenUsage);

/// A model backend. Implementations must be deterministic given the same
/// request sequence when they claim to be scripted.
pub trait Backend: Send + Sync {
    fn infer(&self, request: &ChatRequest) -> Result<InferOutput, GatewayError>;
    /// Scripted backends let the orchestrator skip live-only work (e.g.
    /// the merge summary uses deterministic concatenation instead of a
    /// model call).
    fn is_scripted(&self) -> bool {
        false
    }
}

/// Whitespace-delimited token count used by the scripted backend.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// The instrumented entry point for model calls.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    ledger: Arc<UsageLedger>,
    clock: Arc<StageClock>,
    events: Arc<EventLog>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        ledger: Arc<UsageLedger>,
        clock: Arc<StageClock>,
        events: Arc<EventLog>,
    ) -> Self {
        Gateway {
            backend,
            ledger,
            clock,
            events,
        }
    }

    pub fn is_scripted(&self) -> bool {
        self.backend.is_scripted()
    }

    /// Perform one model call: infer, account, log, parse.
    pub fn complete(
        &self,
        request: &ChatRequest,
        call: CallKind,
    ) -> Result<ModelResponse, GatewayError> {
        let started = Instant::now();
        let (text, usage) = self.backend.infer(request)?;
        let duration = started.elapsed();
        let stage = self.clock.current();
        self.ledger.record(
            &request.agent_name,
            stage,
            usage,
            duration,
            self.clock.elapsed(),
        )?;
        let parsed = parse::parse_calls(&text);
        for warning in &parsed.warnings {
            self.events.log(
                &request.agent_name,
                kind::PARSE_WARNING,
                json!({"reason": warning.reason, "snippet": warning.snippet}),
            );
        }
        self.events.log(
            &request.agent_name,
            kind::MODEL_CALL,
            json!({
                "kind": call.label(),
                "stage": stage,
                "input_tokens": usage.input_tokens,
                "output_tokens": usage.output_tokens,
                "duration_ms": duration.as_secs_f64() * 1000.0,
                "calls": parsed.calls.len(),
            }),
        );
        Ok(ModelResponse {
            text,
            parsed_calls: parsed.calls,
            usage,
        })
    }
}
