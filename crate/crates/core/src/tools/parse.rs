//! Recover structured payloads from model text.
//!
//! `parse_calls` scans ```call fences and validates each body against the
//! registry: the tool must exist and every declared parameter must be
//! present as a string. `parse_messages` scans ```msg fences for
//! `{"to", "text"}` objects. Malformed blocks never abort parsing; they
//! are skipped and reported as [`ParseWarning`]s.

use super::{schema, FunctionCall, ParseWarning};
use crate::wire;

/// Calls recovered from one response, plus the blocks that were skipped.
#[derive(Debug, Clone, Default)]
pub struct ParsedCalls {
    pub calls: Vec<FunctionCall>,
    pub warnings: Vec<ParseWarning>,
}

/// An outgoing message requested by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutgoingMessage {
    pub to: String,
    pub text: String,
}

/// Messages recovered from one response, plus skipped blocks.
#[derive(Debug, Clone, Default)]
pub struct ParsedMessages {
    pub messages: Vec<OutgoingMessage>,
    pub warnings: Vec<ParseWarning>,
}

fn snippet(body: &str) -> String {
    let mut s: String = body.chars().take(120).collect();
    if s.len() < body.len() {
        s.push_str("...");
    }
    s
}

/// Extract function calls from response text, in source order.
pub fn parse_calls(text: &str) -> ParsedCalls {
    let mut out = ParsedCalls::default();
    for fence in wire::scan_fences(text, "call") {
        let value: serde_json::Value = match serde_json::from_str(&fence.body) {
            Ok(v) => v,
            Err(e) => {
                out.warnings.push(ParseWarning {
                    reason: format!("invalid JSON: {e}"),
                    snippet: snippet(&fence.body),
                });
                continue;
            }
        };
        let call: FunctionCall = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => {
                out.warnings.push(ParseWarning {
                    reason: format!("not a call object: {e}"),
                    snippet: snippet(&fence.body),
                });
                continue;
            }
        };
        let Some(spec) = schema(&call.tool) else {
            out.warnings.push(ParseWarning {
                reason: format!("unknown tool {}", call.tool),
                snippet: snippet(&fence.body),
            });
            continue;
        };
        // every declared parameter is required and must be a string
        let missing: Vec<&str> = spec
            .parameters
            .iter()
            .filter(|p| call.arg(&p.name).is_none())
            .map(|p| p.name.as_str())
            .collect();
        if !missing.is_empty() {
            out.warnings.push(ParseWarning {
                reason: format!(
                    "{} missing required argument(s): {}",
                    call.tool,
                    missing.join(", ")
                ),
                snippet: snippet(&fence.body),
            });
            continue;
        }
        out.calls.push(call);
    }
    out
}

/// Extract outgoing messages from response text, in source order.
pub fn parse_messages(text: &str) -> ParsedMessages {
    let mut out = ParsedMessages::default();
    for fence in wire::scan_fences(text, "msg") {
        let value: serde_json::Value = match serde_json::from_str(&fence.body) {
            Ok(v) => v,
            Err(e) => {
                out.warnings.push(ParseWarning {
                    reason: format!("invalid JSON: {e}"),
                    snippet: snippet(&fence.body),
                });
                continue;
            }
        };
        let (to, msg_text) = match (
            value.get("to").and_then(|v| v.as_str()),
            value.get("text").and_then(|v| v.as_str()),
        ) {
            (Some(to), Some(text)) if !to.is_empty() => (to.to_string(), text.to_string()),
            _ => {
                out.warnings.push(ParseWarning {
                    reason: "msg block needs string fields \"to\" and \"text\"".to_string(),
                    snippet: snippet(&fence.body),
                });
                continue;
            }
        };
        out.messages.push(OutgoingMessage { to, text: msg_text });
    }
    out
}
