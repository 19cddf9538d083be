//! HTTP chat-completion backend.
//!
//! Speaks the common `/chat/completions` shape: the system prompt plus a
//! rendered description of the tool fence grammar go into the system
//! message, every context message becomes a user message labelled with its
//! speaker, and the response text is read from `choices[0].message.content`.
//! Tool use stays inside the text (fenced blocks), so any chat-completion
//! provider works without provider-specific function-call plumbing.
//!
//! Transport and server errors are retried with exponential backoff; when
//! the retry budget is exhausted the call fails with `BackendUnavailable`.

use super::{Backend, ChatRequest, GatewayError, InferOutput};
use crate::config::HttpConfig;
use crate::metrics::TokenUsage;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client builds");
        HttpBackend { config, client }
    }

    fn render_system(&self, request: &ChatRequest) -> String {
        let mut system = request.system_prompt.clone();
        if !request.tool_schemas.is_empty() {
            let schemas =
                serde_json::to_string_pretty(&request.tool_schemas).expect("schemas serialize");
            system.push_str("\n\n# Tools\n");
            system.push_str(
                "You may call tools by emitting fenced blocks. Each block holds one JSON object:\n\
                 \n```call\n{\"tool\": \"<name>\", \"arguments\": {...}}\n```\n\
                 \nTo send a message to another agent, emit:\n\
                 \n```msg\n{\"to\": \"<agent>\", \"text\": \"...\"}\n```\n\
                 \nAvailable tools:\n",
            );
            system.push_str(&schemas);
        }
        system
    }

    fn attempt(&self, request: &ChatRequest) -> Result<InferOutput, String> {
        let mut messages = vec![json!({"role": "system", "content": self.render_system(request)})];
        for msg in &request.context {
            messages.push(json!({
                "role": "user",
                "content": format!("{}: {}", msg.speaker, msg.text),
            }));
        }
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(format!("retryable status {status}"));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(format!("status {status}: {text}"));
        }
        let parsed: ChatResponse = response.json().map_err(|e| format!("bad body: {e}"))?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| "response had no content".to_string())?;
        let usage = parsed.usage.unwrap_or_default();
        Ok((
            text,
            TokenUsage::new(usage.prompt_tokens, usage.completion_tokens),
        ))
    }
}

impl Backend for HttpBackend {
    fn infer(&self, request: &ChatRequest) -> Result<InferOutput, GatewayError> {
        let attempts = self.config.retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << (attempt - 1)));
            }
            match self.attempt(request) {
                Ok(output) => return Ok(output),
                Err(e) => last_error = e,
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts,
            message: last_error,
        })
    }
}
