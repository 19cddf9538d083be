//! Schedule properties for the agent runtime. Whatever interleaving the
//! OS produces, the event log must replay as a legal state machine with
//! every message conserved: drained exactly once, in order, in a batch
//! that is verified exactly once.

mod common;

use proptest::prelude::*;
use std::time::{Duration, Instant};

fn flood_params() -> impl Strategy<Value = (usize, Vec<(usize, u64)>)> {
    (1usize..5).prop_flat_map(|agents| {
        let posts = proptest::collection::vec((0..agents, 0u64..400), 0..32);
        (Just(agents), posts)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn random_floods_replay_legal_and_lossless(
        (agents, posts) in flood_params(),
        drivers in 1usize..4,
    ) {
        let rig = common::run_flood(agents, &posts, drivers);
        common::assert_lossless(&rig.log_path);
    }
}

#[test]
fn messages_arriving_mid_cycle_coalesce_into_the_next_batch() {
    let rig = common::rig(1, Some(Duration::from_millis(25)));
    rig.post("agent0", "first");

    // wait for the first cycle to start, then burst into its back
    let agent = rig.ctx.registry.get("agent0").unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    while agent.state() != mega_core::runtime::AgentState::Processing {
        assert!(Instant::now() < deadline, "first cycle never started");
        std::thread::sleep(Duration::from_micros(200));
    }
    for i in 0..7 {
        rig.post("agent0", &format!("burst {i}"));
    }
    rig.finish();

    let events = mega_core::replay::read_log(&rig.log_path).unwrap();
    let batch_sizes: Vec<u64> = events
        .iter()
        .filter(|e| e.record.event == mega_core::event::kind::BATCH)
        .map(|e| e.record.detail["size"].as_u64().unwrap())
        .collect();
    assert_eq!(
        batch_sizes,
        [1, 7],
        "the whole burst must drain as one batch"
    );
    common::assert_lossless(&rig.log_path);
}

#[test]
fn an_idle_flood_finishes_with_an_empty_legal_log() {
    let rig = common::run_flood(3, &[], 1);
    let summary = common::assert_lossless(&rig.log_path);
    assert_eq!(summary.agents, 3);
}
