//! Writes an episode trace to disk, reads it back, and rebuilds the
//! outcome, SIR history and cost ledger from the events alone.
//!
//! cargo run --example trace_replay

use sirloop::backend::{ScriptMatch, ScriptedBackend};
use sirloop::engine::Engine;
use sirloop::fixtures;
use sirloop::trace::{mask_timestamps, replay_from_store, FileTraceStore, TraceStore};

fn main() {
    let dir = std::env::temp_dir().join(format!("sirloop-replay-{}", std::process::id()));
    let store = FileTraceStore::new(&dir).expect("trace dir");

    // two rounds of feedback, then the cap forces an answer
    let backend = ScriptedBackend::new();
    for round in 1..=3 {
        backend.push(
            ScriptMatch::contains(fixtures::TRANSLATOR_STEP),
            fixtures::caption(&format!("a church with a poster (pass {round})"), "mid"),
        );
        backend.push(ScriptMatch::contains(fixtures::REASONER_STEP), fixtures::feedback("what is on the poster?"));
    }
    backend.push(ScriptMatch::contains(fixtures::FORCE_STEP), fixtures::answer("dove", "low", "best guess"));

    let engine = Engine::new(fixtures::offline_config(), fixtures::offline_toolbox()).expect("valid config");
    let task = fixtures::poster_task();
    let mut writer = store.open_episode(&task.task_id).expect("open trace");
    let live = engine.run_episode(&task, &backend, writer.as_mut()).expect("episode");
    drop(writer);

    println!("trace file: {}", store.path_for(&task.task_id).display());
    let lines = store.read_lines(&task.task_id).expect("read trace");
    println!("first event: {}", mask_timestamps(&lines[0]));

    let view = replay_from_store(&store, &task.task_id).expect("complete trace");
    println!(
        "replayed answer: {} (forced: {}, iterations: {})",
        view.outcome.answer.normalized, view.outcome.forced, view.outcome.outer_iterations_used
    );
    for (iter, fb) in &view.feedback {
        println!("  feedback after iteration {iter}: {fb}");
    }
    for s in &view.snapshots {
        println!("  snapshot ({},{}) {:?}", s.label.outer_iteration, s.label.inner_step, s.origin);
    }
    assert_eq!(view.outcome, live.outcome);
    assert_eq!(view.ledger, live.ledger);
    println!("replay matches the live run ({} ledger entries)", view.ledger.entries.len());
    let _ = std::fs::remove_dir_all(&dir);
}
