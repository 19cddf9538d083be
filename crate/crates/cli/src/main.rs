//! Command-line front end: run a meta-prompt to a deliverable, re-check a
//! finished run's event log offline, or print its ledger and hierarchy.
//!
//! Exit codes are the only success/failure channel: 0 for a clean result,
//! 2 for a run that aborted (the deliverable is partial), 1 for usage
//! errors and invariant violations. Diagnostics go to standard error;
//! `--json` switches standard output to machine-parseable JSON.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mega_core::config::RuntimeConfig;
use mega_core::event::kind;
use mega_core::gateway::scripted::ScriptedScenario;
use mega_core::orchestrator::{self, BackendChoice, RunOptions};
use mega_core::replay;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mega",
    version,
    about = "Hierarchical multi-agent runtime driven by one meta-prompt"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a meta-prompt until a validated deliverable is aggregated
    Run(RunArgs),
    /// Re-print a run's state transitions and re-check every invariant
    Replay(LogArgs),
    /// Print a run's token ledger and hierarchy summary
    Report(LogArgs),
}

#[derive(Args)]
struct RunArgs {
    /// File holding the meta-prompt text
    #[arg(long, value_name = "FILE")]
    meta: PathBuf,
    /// Model backend driving the agents
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    backend: BackendKind,
    /// Scenario JSON (required by the scripted backend)
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Directory receiving the workspace, memory, log, and artifacts
    #[arg(long, value_name = "DIR")]
    workspace: PathBuf,
    /// Runtime configuration JSON (flags and MEGA_* variables win over it)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Process one agent cycle at a time instead of in parallel
    #[arg(long)]
    serial: bool,
    /// Event log location, defaulting to <workspace>/log.jsonl
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Print the run summary as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Deterministic scripted responses from a scenario file
    Scripted,
    /// Live chat-completion endpoint (needs MEGA_API_KEY)
    Http,
}

#[derive(Args)]
struct LogArgs {
    /// Event log to read
    #[arg(long, value_name = "FILE")]
    log: PathBuf,
    /// Print the summary as JSON
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("mega: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let meta = std::fs::read_to_string(&args.meta)
        .with_context(|| format!("cannot read meta-prompt {}", args.meta.display()))?;

    // precedence: flags > environment > config file > profile defaults
    let mut config = match args.backend {
        BackendKind::Scripted => RuntimeConfig::test_profile(),
        BackendKind::Http => RuntimeConfig::live_profile(),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        config
            .apply_file(&text)
            .with_context(|| format!("config {}", path.display()))?;
    }
    config.apply_env();

    let backend = match args.backend {
        BackendKind::Scripted => {
            let path = args
                .scenario
                .as_ref()
                .ok_or_else(|| anyhow!("the scripted backend requires --scenario <FILE>"))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario {}", path.display()))?;
            let scenario = ScriptedScenario::from_json(&text)
                .with_context(|| format!("scenario {}", path.display()))?;
            BackendChoice::Scripted(scenario)
        }
        BackendKind::Http => {
            if args.scenario.is_some() {
                bail!("--scenario only applies to the scripted backend");
            }
            if config.http.endpoint.is_empty() {
                bail!("the http backend needs an endpoint: set MEGA_API_ENDPOINT or http.endpoint in --config");
            }
            if config.http.api_key.as_deref().is_none_or(str::is_empty) {
                bail!("the http backend needs a key: set MEGA_API_KEY or http.api_key in --config");
            }
            BackendChoice::Http(config.http.clone())
        }
    };

    let summary = orchestrator::run(
        &meta,
        RunOptions {
            config,
            backend,
            run_dir: args.workspace.clone(),
            log_path: args.log,
            serial: args.serial,
        },
    )?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        match &summary.aborted {
            Some(reason) => println!("aborted: {reason}"),
            None => println!("deliverable: {} files", summary.deliverable.files.len()),
        }
        for file in &summary.deliverable.files {
            println!("  {}  {}", &file.hash[..12.min(file.hash.len())], file.path);
        }
        println!("{}", summary.report.render_text().trim_end());
        println!("agents: {}", summary.agents_spawned);
        println!("artifacts: {}", args.workspace.display());
    }
    Ok(if summary.aborted.is_some() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_replay(args: LogArgs) -> anyhow::Result<ExitCode> {
    let events = replay::read_log(&args.log)?;
    if events.is_empty() {
        println!("no events");
        return Ok(ExitCode::SUCCESS);
    }
    let summary = replay::validate(&events).map_err(|v| anyhow!("{v}"))?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "events": summary.events,
                "agents": summary.agents,
                "max_depth": summary.max_depth,
                "level_sizes": summary.level_sizes,
                "validation_rounds": summary.validation_rounds,
                "report": summary.report,
                "aborted": summary.aborted,
                "clean": summary.clean,
            }))?
        );
    } else {
        for e in &events {
            if e.record.event == kind::STATE {
                println!(
                    "{:>6}  {}: {} -> {}",
                    e.line,
                    e.record.agent,
                    e.record.detail["from"].as_str().unwrap_or("?"),
                    e.record.detail["to"].as_str().unwrap_or("?"),
                );
            }
        }
        println!("events: {}  agents: {}", summary.events, summary.agents);
    }
    if let Some(reason) = &summary.aborted {
        eprintln!("mega: the run aborted: {reason}");
        return Ok(ExitCode::from(2));
    }
    if !summary.clean {
        bail!("unexpected end of log: no completion recorded");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: LogArgs) -> anyhow::Result<ExitCode> {
    let events = replay::read_log(&args.log)?;
    if events.is_empty() {
        println!("no events");
        return Ok(ExitCode::SUCCESS);
    }
    let summary = replay::validate(&events).map_err(|v| anyhow!("{v}"))?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "report": summary.report,
                "agents": summary.agents,
                "max_depth": summary.max_depth,
                "level_sizes": summary.level_sizes,
                "validation_rounds": summary.validation_rounds,
                "aborted": summary.aborted,
            }))?
        );
    } else {
        println!("{}", summary.report.render_text().trim_end());
        println!("agents: {}", summary.agents);
        println!("depth: {}", summary.max_depth);
        println!("levels: {:?}", summary.level_sizes);
        println!("validation rounds: {}", summary.validation_rounds);
        if let Some(reason) = &summary.aborted {
            println!("aborted: {reason}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
