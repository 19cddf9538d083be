//! Hierarchical multi-agent runtime.
//!
//! A single meta-prompt is expanded into a tree of model-driven agents:
//! a Boss decomposes the task and recruits Admin agents, Admins recruit
//! Ordinary workers, and every agent runs the same message-queue state
//! machine (Idle -> Processing -> Response) on its own thread. Agents
//! coordinate through
//!
//! - a versioned, optimistic-concurrency file [`workspace`],
//! - a per-agent vector [`memory`] store with relevance + recency retrieval,
//! - six function-call [`tools`] (file IO, sandboxed execution, recruiting,
//!   termination),
//!
//! while a [`supervisor`] layer watches checklists, output format, and
//! failure patterns, and an [`orchestrator`] drives the run from bootstrap
//! to a validated, aggregated deliverable. Every externally visible step is
//! appended to a JSONL event log that [`replay`] can re-validate offline,
//! and every model call lands in a stage-labelled usage ledger ([`metrics`]).

pub mod config;
pub mod context;
pub mod event;
pub mod gateway;
pub mod memory;
pub mod metrics;
pub mod orchestrator;
pub mod replay;
pub mod runtime;
pub mod supervisor;
pub mod tools;
pub mod wire;
pub mod workspace;
