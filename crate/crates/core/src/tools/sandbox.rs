//! Subprocess sandbox for `exec_python_file` and `input`.
//!
//! Each agent owns at most one live process. Executing a file launches the
//! configured interpreter with the workspace's materialized file tree as
//! working directory, then captures merged stdout/stderr until the process
//! exits or its output has been quiet for the configured window (so
//! interactive programs can be left running and fed lines later via
//! `input`). A wall-clock timeout kills the process and surfaces as
//! [`SandboxError::Timeout`].

use parking_lot::Mutex;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Sandbox tunables resolved from [`crate::config::SandboxConfig`].
#[derive(Debug, Clone)]
pub struct SandboxPolicy {
    pub interpreter: String,
    pub workdir: PathBuf,
    pub exec_timeout: Duration,
    pub quiet_window: Duration,
}

/// Captured output of one exec/input observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    /// Merged stdout + stderr produced during this observation.
    pub output: String,
    /// Exit code if the process finished; `None` while it keeps running.
    pub status: Option<i32>,
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("execution timed out after {timeout:?}; partial output: {partial}")]
    Timeout { timeout: Duration, partial: String },
    #[error("no running process to send input to")]
    NoRunningProcess,
    #[error("failed to launch {interpreter}: {source}")]
    Spawn {
        interpreter: String,
        source: std::io::Error,
    },
    #[error("failed to write to process stdin: {0}")]
    Stdin(std::io::Error),
}

struct Capture {
    data: String,
    /// How much of `data` previous observations already returned.
    cursor: usize,
    last_output: Instant,
}

struct ProcHandle {
    child: Mutex<Child>,
    stdin: Mutex<Option<ChildStdin>>,
    capture: Arc<Mutex<Capture>>,
}

/// Per-agent process table. Thread-safe; agents only touch their own entry.
pub struct SandboxManager {
    procs: Mutex<HashMap<String, Arc<ProcHandle>>>,
}

impl SandboxManager {
    pub fn new() -> Self {
        SandboxManager {
            procs: Mutex::new(HashMap::new()),
        }
    }

    /// Launch `file` under the policy's interpreter on behalf of `agent`.
    /// Any previous process of the same agent is killed first.
    pub fn exec_file(
        &self,
        agent: &str,
        policy: &SandboxPolicy,
        file: &str,
    ) -> Result<ExecResult, SandboxError> {
        self.kill_agent(agent);
        let mut child = Command::new(&policy.interpreter)
            .arg(file)
            .current_dir(&policy.workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::Spawn {
                interpreter: policy.interpreter.clone(),
                source: e,
            })?;
        let capture = Arc::new(Mutex::new(Capture {
            data: String::new(),
            cursor: 0,
            last_output: Instant::now(),
        }));
        let stdin = child.stdin.take();
        if let Some(stdout) = child.stdout.take() {
            spawn_reader(stdout, capture.clone());
        }
        if let Some(stderr) = child.stderr.take() {
            spawn_reader(stderr, capture.clone());
        }
        let handle = Arc::new(ProcHandle {
            child: Mutex::new(child),
            stdin: Mutex::new(stdin),
            capture,
        });
        self.procs.lock().insert(agent.to_string(), handle.clone());
        let result = self.settle(&handle, policy);
        if matches!(
            result,
            Err(_)
                | Ok(ExecResult {
                    status: Some(_),
                    ..
                })
        ) {
            self.procs.lock().remove(agent);
        }
        result
    }

    /// Feed one line to the agent's running process and capture the reaction.
    pub fn feed_input(
        &self,
        agent: &str,
        policy: &SandboxPolicy,
        content: &str,
    ) -> Result<ExecResult, SandboxError> {
        let handle = self
            .procs
            .lock()
            .get(agent)
            .cloned()
            .ok_or(SandboxError::NoRunningProcess)?;
        if handle.child.lock().try_wait().ok().flatten().is_some() {
            self.procs.lock().remove(agent);
            return Err(SandboxError::NoRunningProcess);
        }
        {
            let mut stdin = handle.stdin.lock();
            let pipe = stdin.as_mut().ok_or(SandboxError::NoRunningProcess)?;
            pipe.write_all(content.as_bytes())
                .map_err(SandboxError::Stdin)?;
            pipe.write_all(b"\n").map_err(SandboxError::Stdin)?;
            pipe.flush().map_err(SandboxError::Stdin)?;
        }
        handle.capture.lock().last_output = Instant::now();
        let result = self.settle(&handle, policy);
        if matches!(
            result,
            Err(_)
                | Ok(ExecResult {
                    status: Some(_),
                    ..
                })
        ) {
            self.procs.lock().remove(agent);
        }
        result
    }

    /// True if the agent currently has a live process.
    pub fn has_live_process(&self, agent: &str) -> bool {
        let handle = { self.procs.lock().get(agent).cloned() };
        match handle {
            Some(h) => h.child.lock().try_wait().ok().flatten().is_none(),
            None => false,
        }
    }

    /// Kill the agent's process, if any.
    pub fn kill_agent(&self, agent: &str) {
        if let Some(handle) = self.procs.lock().remove(agent) {
            let _ = handle.child.lock().kill();
            let _ = handle.child.lock().wait();
        }
    }

    /// Kill everything (run shutdown).
    pub fn kill_all(&self) {
        let drained: Vec<_> = self.procs.lock().drain().collect();
        for (_, handle) in drained {
            let _ = handle.child.lock().kill();
            let _ = handle.child.lock().wait();
        }
    }

    /// Wait until the process exits or goes quiet; kill on timeout.
    fn settle(
        &self,
        handle: &ProcHandle,
        policy: &SandboxPolicy,
    ) -> Result<ExecResult, SandboxError> {
        let start = Instant::now();
        loop {
            if let Some(status) = handle.child.lock().try_wait().ok().flatten() {
                // give the reader threads a moment to drain the pipes
                std::thread::sleep(Duration::from_millis(20));
                let output = take_delta(&handle.capture);
                return Ok(ExecResult {
                    output,
                    status: status.code().or(Some(-1)),
                });
            }
            if start.elapsed() >= policy.exec_timeout {
                let _ = handle.child.lock().kill();
                let _ = handle.child.lock().wait();
                let partial = take_delta(&handle.capture);
                return Err(SandboxError::Timeout {
                    timeout: policy.exec_timeout,
                    partial,
                });
            }
            {
                let capture = handle.capture.lock();
                if capture.last_output.elapsed() >= policy.quiet_window {
                    drop(capture);
                    let output = take_delta(&handle.capture);
                    return Ok(ExecResult {
                        output,
                        status: None,
                    });
                }
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Default for SandboxManager {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for SandboxManager {
    fn drop(&mut self) {
        self.kill_all();
    }
}

fn take_delta(capture: &Mutex<Capture>) -> String {
    let mut c = capture.lock();
    let delta = c.data[c.cursor..].to_string();
    c.cursor = c.data.len();
    delta
}

fn spawn_reader(mut pipe: impl Read + Send + 'static, capture: Arc<Mutex<Capture>>) {
    std::thread::spawn(move || {
        let mut buf = [0u8; 4096];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let mut c = capture.lock();
                    c.data.push_str(&String::from_utf8_lossy(&buf[..n]));
                    c.last_output = Instant::now();
                }
            }
        }
    });
}
