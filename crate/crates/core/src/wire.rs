//! Fenced-block wire grammar for model responses.
//!
//! Model text carries structured payloads in tagged code fences:
//!
//! ````text
//! The design is ready.
//! ```call
//! {"tool": "write_file", "arguments": {"filename": "a.txt", "content": "hi"}}
//! ```
//! ```msg
//! {"to": "Carol", "text": "a.txt is ready"}
//! ```
//! ````
//!
//! A `call` fence holds one function call; a `msg` fence holds one outgoing
//! message. Anything else in the text is prose. Scanning is forgiving: an
//! unterminated fence runs to end of text and the payload parser decides
//! whether the body is usable.

/// One fenced block: the tag after the opening backticks and the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence {
    pub tag: String,
    pub body: String,
}

/// Extract all fenced blocks with the given tag, in source order.
pub fn scan_fences(text: &str, tag: &str) -> Vec<Fence> {
    scan_all_fences(text)
        .into_iter()
        .filter(|f| f.tag == tag)
        .collect()
}

/// Extract every fenced block, in source order.
pub fn scan_all_fences(text: &str) -> Vec<Fence> {
    let mut fences = Vec::new();
    let mut current: Option<Fence> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None => {
                if let Some(rest) = trimmed.strip_prefix("```") {
                    let tag = rest.trim();
                    if !tag.is_empty() {
                        current = Some(Fence {
                            tag: tag.to_string(),
                            body: String::new(),
                        });
                    }
                }
            }
            Some(fence) => {
                if trimmed.trim_end() == "```" {
                    let mut done = current.take().unwrap();
                    if done.body.ends_with('\n') {
                        done.body.pop();
                    }
                    fences.push(done);
                } else {
                    fence.body.push_str(line);
                    fence.body.push('\n');
                }
            }
        }
    }
    // unterminated fence: keep what we saw, the payload parser will judge it
    if let Some(mut fence) = current {
        if fence.body.ends_with('\n') {
            fence.body.pop();
        }
        fences.push(fence);
    }
    fences
}

/// Render a `call` fence (used by scenario builders and tests).
pub fn render_call(tool: &str, arguments: &serde_json::Value) -> String {
    format!(
        "```call\n{}\n```",
        serde_json::to_string(&serde_json::json!({"tool": tool, "arguments": arguments}))
            .expect("call payload serializes")
    )
}

/// Render a `msg` fence (used by scenario builders and tests).
pub fn render_msg(to: &str, text: &str) -> String {
    format!(
        "```msg\n{}\n```",
        serde_json::to_string(&serde_json::json!({"to": to, "text": text}))
            .expect("msg payload serializes")
    )
}
