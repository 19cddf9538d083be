//! Deterministic scripted backend.
//!
//! A [`ScriptedScenario`] maps `(agent, per-agent call ordinal)` to a
//! canned response; anything unscripted falls back to the scenario's
//! default response. The backend keeps one atomic counter per agent, so a
//! fixed scenario replays bit-identically regardless of thread scheduling,
//! as long as each agent's own call order is deterministic.
//!
//! Scenario JSON:
//!
//! ```json
//! {
//!   "default": "Understood.",
//!   "latency_ms": 0,
//!   "steps": [
//!     {"agent": "Bob", "index": 0, "response": "...", "latency_ms": 100}
//!   ]
//! }
//! ```
//!
//! `latency_ms` (global or per step) injects wall-clock latency into the
//! call, which the parallel-vs-serial scheduling drills rely on.

use super::{count_tokens, Backend, ChatRequest, GatewayError, InferOutput};
use crate::metrics::TokenUsage;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Duration;

/// One scripted response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub agent: String,
    pub index: u64,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

/// The full script for a run.
#[derive(Debug, Clone)]
pub struct ScriptedScenario {
    default_response: String,
    default_latency: Option<Duration>,
    steps: HashMap<(String, u64), ScenarioStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error("duplicate step for agent {agent} index {index}")]
    DuplicateStep { agent: String, index: u64 },
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    default: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ms: Option<u64>,
    #[serde(default)]
    steps: Vec<ScenarioStep>,
}

impl ScriptedScenario {
    pub fn new(default_response: impl Into<String>) -> Self {
        ScriptedScenario {
            default_response: default_response.into(),
            default_latency: None,
            steps: HashMap::new(),
        }
    }

    /// Latency applied to every step that does not override it.
    pub fn set_default_latency(&mut self, latency: Duration) {
        self.default_latency = Some(latency);
    }

    pub fn add_step(&mut self, agent: &str, index: u64, response: String) -> &mut Self {
        self.steps.insert(
            (agent.to_string(), index),
            ScenarioStep {
                agent: agent.to_string(),
                index,
                response,
                latency_ms: None,
            },
        );
        self
    }

    pub fn add_step_with_latency(
        &mut self,
        agent: &str,
        index: u64,
        response: String,
        latency: Duration,
    ) -> &mut Self {
        self.steps.insert(
            (agent.to_string(), index),
            ScenarioStep {
                agent: agent.to_string(),
                index,
                response,
                latency_ms: Some(latency.as_millis() as u64),
            },
        );
        self
    }

    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            serde_json::from_str(json).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
        let mut scenario = ScriptedScenario::new(file.default);
        scenario.default_latency = file.latency_ms.map(Duration::from_millis);
        for step in file.steps {
            let key = (step.agent.clone(), step.index);
            if scenario.steps.insert(key, step.clone()).is_some() {
                return Err(ScenarioError::DuplicateStep {
                    agent: step.agent,
                    index: step.index,
                });
            }
        }
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut steps: Vec<ScenarioStep> = self.steps.values().cloned().collect();
        steps.sort_by(|a, b| a.agent.cmp(&b.agent).then(a.index.cmp(&b.index)));
        let file = ScenarioFile {
            default: self.default_response.clone(),
            latency_ms: self.default_latency.map(|d| d.as_millis() as u64),
            steps,
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes")
    }

    fn resolve(&self, agent: &str, ordinal: u64) -> (String, Option<Duration>) {
        match self.steps.get(&(agent.to_string(), ordinal)) {
            Some(step) => (
                step.response.clone(),
                step.latency_ms
                    .map(Duration::from_millis)
                    .or(self.default_latency),
            ),
            None => (self.default_response.clone(), self.default_latency),
        }
    }
}

/// Backend that replays a [`ScriptedScenario`].
pub struct ScriptedBackend {
    scenario: ScriptedScenario,
    counters: Mutex<HashMap<String, u64>>,
}

impl ScriptedBackend {
    pub fn new(scenario: ScriptedScenario) -> Self {
        ScriptedBackend {
            scenario,
            counters: Mutex::new(HashMap::new()),
        }
    }

    /// How many calls an agent has made so far.
    pub fn calls_for(&self, agent: &str) -> u64 {
        self.counters.lock().get(agent).copied().unwrap_or(0)
    }
}

impl Backend for ScriptedBackend {
    fn infer(&self, request: &ChatRequest) -> Result<InferOutput, GatewayError> {
        let ordinal = {
            let mut counters = self.counters.lock();
            let counter = counters.entry(request.agent_name.clone()).or_insert(0);
            let ordinal = *counter;
            *counter += 1;
            ordinal
        };
        let (response, latency) = self.scenario.resolve(&request.agent_name, ordinal);
        if let Some(latency) = latency {
            std::thread::sleep(latency);
        }
        let input = count_tokens(&request.system_prompt)
            + request
                .context
                .iter()
                .map(|m| count_tokens(&m.text))
                .sum::<u64>();
        let usage = TokenUsage::new(input, count_tokens(&response));
        Ok((response, usage))
    }

    fn is_scripted(&self) -> bool {
        true
    }
}
