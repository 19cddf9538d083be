//! The per-agent thread: wait for mail, claim the whole queue as one batch,
//! process, repeat.
//!
//! Claiming is atomic with respect to enqueues: state change, drain, the
//! pending/processing counter updates, and the batch log entry all happen
//! under the mailbox lock. This gives the event log a hard guarantee that
//! replay checks later: every message is consumed by the first batch its
//! recipient drains after the enqueue was logged.
//!
//! A finished agent parks in an untimed wait; new mail revives it. Threads
//! retire on shutdown, on replacement, or when the run aborts.

use crate::context::RuntimeContext;
use crate::event::kind;
use crate::runtime::step::{self, CycleExit};
use crate::runtime::{AgentHandle, AgentState, Message};
use serde_json::json;
use std::sync::atomic::Ordering;
use std::sync::Arc;

fn drain_locked(
    ctx: &RuntimeContext,
    agent: &AgentHandle,
    mbox: &mut crate::runtime::Mailbox,
) -> Vec<Message> {
    let batch: Vec<Message> = mbox.queue.drain(..).collect();
    ctx.registry
        .pending
        .fetch_sub(batch.len() as i64, Ordering::SeqCst);
    let from = mbox.state;
    mbox.state = AgentState::Processing;
    ctx.events.log(
        &agent.name,
        kind::STATE,
        json!({"from": from.label(), "to": AgentState::Processing.label()}),
    );
    ctx.events.log(
        &agent.name,
        kind::BATCH,
        json!({
            "size": batch.len(),
            "seqs": batch.iter().map(|m| m.seq).collect::<Vec<_>>(),
        }),
    );
    batch
}

pub(crate) fn run_agent(ctx: Arc<RuntimeContext>, agent: Arc<AgentHandle>) {
    'outer: loop {
        // wait for mail, then claim the entire queue as one batch
        let mut batch = {
            let mut mbox = agent.mbox.lock();
            loop {
                if ctx.is_shutdown() || agent.is_replaced() {
                    return;
                }
                if !mbox.queue.is_empty() {
                    break;
                }
                if agent.is_finished() {
                    agent.wake.wait(&mut mbox);
                } else {
                    agent.wake.wait_for(&mut mbox, ctx.config.poll_interval);
                }
            }
            // processing rises before pending falls so the two counters
            // never read as quiescent mid-claim
            ctx.registry.processing.fetch_add(1, Ordering::SeqCst);
            drain_locked(&ctx, &agent, &mut mbox)
        };

        loop {
            let exit = {
                let _serial = ctx.serial.then(|| ctx.serial_token.lock());
                step::run_cycle(&ctx, &agent, &batch)
            };
            if exit == CycleExit::Aborted {
                ctx.registry.processing.fetch_sub(1, Ordering::SeqCst);
                return;
            }

            let mut mbox = agent.mbox.lock();
            if !mbox.queue.is_empty() && !ctx.is_shutdown() && !agent.is_replaced() {
                // Response -> Processing: chain straight into the next batch
                batch = drain_locked(&ctx, &agent, &mut mbox);
            } else {
                let from = mbox.state;
                mbox.state = AgentState::Idle;
                ctx.events.log(
                    &agent.name,
                    kind::STATE,
                    json!({"from": from.label(), "to": AgentState::Idle.label()}),
                );
                drop(mbox);
                ctx.registry.processing.fetch_sub(1, Ordering::SeqCst);
                if ctx.is_shutdown() || agent.is_replaced() {
                    return;
                }
                continue 'outer;
            }
        }
    }
}
