//! Runs the poster case offline and prints each SIR snapshot and the answer.
//!
//! cargo run --example poster_episode

use sirloop::engine::Engine;
use sirloop::fixtures;
use sirloop::trace::{replay, MemoryTraceStore, TraceStore};

fn main() {
    let engine = Engine::new(fixtures::offline_config(), fixtures::offline_toolbox()).expect("valid config");
    let task = fixtures::poster_task();
    let backend = fixtures::poster_script();
    let store = MemoryTraceStore::new();
    let mut writer = store.open_episode(&task.task_id).expect("memory store");
    let run = engine
        .run_episode(&task, &backend, writer.as_mut())
        .expect("scripted episode");

    println!("question: {}", task.render_question());
    for s in &run.snapshots {
        println!(
            "({},{}) {:?} [{}] {}",
            s.label.outer_iteration,
            s.label.inner_step,
            s.origin,
            s.sir.confidence.as_str(),
            s.sir.global_caption
        );
    }
    let a = &run.outcome.answer;
    println!("answer: {} ({}) - {}", a.normalized, a.confidence.as_str(), a.reasoning);
    println!("backend calls: {}  policy calls: {}", run.backend_calls, run.policy_calls);

    let events = store.read_events(&task.task_id).expect("trace");
    let view = replay(&events).expect("complete trace");
    assert_eq!(view.outcome, run.outcome);
    println!("trace events: {} (replay matches the live run)", events.len());
}
