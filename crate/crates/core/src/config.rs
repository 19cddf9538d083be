//! Runtime configuration.
//!
//! A [`RuntimeConfig`] starts from one of two profiles (`test` for fast
//! scripted runs, `live` for real endpoints) and is then overlaid, in
//! increasing precedence, by a JSON config file, environment variables,
//! and CLI flags. Every field has a safe default so a bare `RuntimeConfig`
//! is always runnable.

use serde::Deserialize;
use std::time::Duration;

/// Hard limits and tunables shared by every subsystem.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    /// How long an idle agent sleeps between queue checks.
    pub poll_interval: Duration,
    /// Upper bound on model-call iterations inside one processing cycle.
    pub max_function_call_iterations: u32,
    /// Hard cap on the number of agents ever spawned in a run.
    pub max_agents: usize,
    /// Maximum tree depth; the Boss sits at depth 0.
    pub max_hierarchy_depth: usize,
    /// Retry prompts issued for a recurring failure before escalating.
    pub retry_budget: u32,
    /// Consecutive identical calls/responses that count as repetition.
    pub repetition_threshold: u32,
    /// Wall-clock bound on reaching quiescence before the run aborts.
    pub deadlock_timeout: Duration,
    /// Sampling temperature forwarded to the model backend.
    pub temperature: f32,
    /// Relevance hits returned by memory retrieval.
    pub n_relevant: usize,
    /// Recency tail returned by memory retrieval.
    pub k_latest: usize,
    /// Phrases (matched case-insensitively) that count as a refusal.
    pub refusal_patterns: Vec<String>,
    pub sandbox: SandboxConfig,
    pub http: HttpConfig,
}

/// Subprocess sandbox policy for `exec_python_file` / `input`.
#[derive(Debug, Clone)]
pub struct SandboxConfig {
    /// Interpreter the sandbox launches; tests point this at a stub.
    pub interpreter: String,
    /// Wall-clock budget for a single exec/input observation.
    pub exec_timeout: Duration,
    /// Output is considered settled after this long with no new bytes.
    pub quiet_window: Duration,
    /// File extensions agents may write.
    pub writable_extensions: Vec<String>,
}

/// HTTP chat-completion backend settings.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retries: u32,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self::test_profile()
    }
}

impl RuntimeConfig {
    /// Fast profile for scripted runs and the test suite.
    pub fn test_profile() -> Self {
        RuntimeConfig {
            poll_interval: Duration::from_millis(50),
            max_function_call_iterations: 10,
            max_agents: 1024,
            max_hierarchy_depth: 6,
            retry_budget: 3,
            repetition_threshold: 3,
            deadlock_timeout: Duration::from_secs(30),
            temperature: 0.0,
            n_relevant: 1,
            k_latest: 6,
            refusal_patterns: vec!["sorry, i can't help with that.".to_string()],
            sandbox: SandboxConfig {
                interpreter: "python3".to_string(),
                exec_timeout: Duration::from_secs(30),
                quiet_window: Duration::from_millis(200),
                writable_extensions: vec!["txt".to_string(), "py".to_string()],
            },
            http: HttpConfig::default(),
        }
    }

    /// Conservative profile for runs against a live endpoint.
    pub fn live_profile() -> Self {
        RuntimeConfig {
            poll_interval: Duration::from_secs(1),
            deadlock_timeout: Duration::from_secs(300),
            ..Self::test_profile()
        }
    }

    /// Overlay settings parsed from a JSON config file.
    pub fn apply_file(&mut self, json: &str) -> Result<(), ConfigError> {
        let file: ConfigFile =
            serde_json::from_str(json).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        if let Some(v) = file.poll_interval_ms {
            self.poll_interval = Duration::from_millis(v);
        }
        if let Some(v) = file.max_function_call_iterations {
            self.max_function_call_iterations = v;
        }
        if let Some(v) = file.max_agents {
            self.max_agents = v;
        }
        if let Some(v) = file.max_hierarchy_depth {
            self.max_hierarchy_depth = v;
        }
        if let Some(v) = file.retry_budget {
            self.retry_budget = v;
        }
        if let Some(v) = file.repetition_threshold {
            self.repetition_threshold = v;
        }
        if let Some(v) = file.deadlock_timeout_ms {
            self.deadlock_timeout = Duration::from_millis(v);
        }
        if let Some(v) = file.temperature {
            self.temperature = v;
        }
        if let Some(v) = file.n_relevant {
            self.n_relevant = v;
        }
        if let Some(v) = file.k_latest {
            self.k_latest = v;
        }
        if let Some(v) = file.refusal_patterns {
            self.refusal_patterns = v;
        }
        if let Some(sb) = file.sandbox {
            if let Some(v) = sb.interpreter {
                self.sandbox.interpreter = v;
            }
            if let Some(v) = sb.exec_timeout_ms {
                self.sandbox.exec_timeout = Duration::from_millis(v);
            }
            if let Some(v) = sb.quiet_window_ms {
                self.sandbox.quiet_window = Duration::from_millis(v);
            }
            if let Some(v) = sb.writable_extensions {
                self.sandbox.writable_extensions = v;
            }
        }
        if let Some(http) = file.http {
            if let Some(v) = http.endpoint {
                self.http.endpoint = v;
            }
            if let Some(v) = http.model {
                self.http.model = v;
            }
            if let Some(v) = http.api_key {
                self.http.api_key = Some(v);
            }
            if let Some(v) = http.retries {
                self.http.retries = v;
            }
        }
        Ok(())
    }

    /// Overlay `MEGA_*` environment variables (higher precedence than a file).
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var("MEGA_API_KEY") {
            if !v.is_empty() {
                self.http.api_key = Some(v);
            }
        }
        if let Ok(v) = std::env::var("MEGA_API_ENDPOINT") {
            if !v.is_empty() {
                self.http.endpoint = v;
            }
        }
        if let Ok(v) = std::env::var("MEGA_MODEL") {
            if !v.is_empty() {
                self.http.model = v;
            }
        }
    }
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o-mini".to_string(),
            api_key: None,
            retries: 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Malformed(String),
}

// On-disk shape: every field optional so partial files overlay defaults.
#[derive(Deserialize)]
struct ConfigFile {
    poll_interval_ms: Option<u64>,
    max_function_call_iterations: Option<u32>,
    max_agents: Option<usize>,
    max_hierarchy_depth: Option<usize>,
    retry_budget: Option<u32>,
    repetition_threshold: Option<u32>,
    deadlock_timeout_ms: Option<u64>,
    temperature: Option<f32>,
    n_relevant: Option<usize>,
    k_latest: Option<usize>,
    refusal_patterns: Option<Vec<String>>,
    sandbox: Option<SandboxFile>,
    http: Option<HttpFile>,
}

#[derive(Deserialize)]
struct SandboxFile {
    interpreter: Option<String>,
    exec_timeout_ms: Option<u64>,
    quiet_window_ms: Option<u64>,
    writable_extensions: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct HttpFile {
    endpoint: Option<String>,
    model: Option<String>,
    api_key: Option<String>,
    retries: Option<u32>,
}
