//! Asks a question against real chat-completions endpoints.
//!
//! TRANSLATOR_API_KEY=.. REASONER_API_KEY=.. \
//!   cargo run --example live_ask -- config.toml image.png "What animal is on the poster?" "A:cat" "B:dove"
//!
//! The config file supplies endpoint URLs and model names; see README.

use std::path::Path;

use sirloop::backend::HttpBackend;
use sirloop::config::RunConfig;
use sirloop::engine::Engine;
use sirloop::task::{parse_option_arg, ImageInput, Task};
use sirloop::toolbox::{NoSandbox, Toolbox};
use sirloop::trace::{FileTraceStore, TraceStore};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("usage: live_ask <config.toml> <image> <question> [LABEL:TEXT ...]");
        std::process::exit(2);
    }
    let config = RunConfig::load(Path::new(&args[0])).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1)
    });
    let image = ImageInput::from_path(Path::new(&args[1])).expect("readable image");
    let options = args[3..].iter().filter_map(|a| parse_option_arg(a)).collect();
    let task = Task::new("live", args[2].as_str(), options, image).expect("valid task");

    let backend = HttpBackend::from_config(&config);
    let toolbox = std::sync::Arc::new(Toolbox::with_runner(std::sync::Arc::new(NoSandbox)));
    let engine = Engine::new(config, toolbox).expect("valid config");
    let store = FileTraceStore::for_run(Path::new("runs"), "live").expect("trace dir");
    let mut writer = store.open_episode(&task.task_id).expect("open trace");
    match engine.run_episode(&task, &backend, writer.as_mut()) {
        Ok(run) => {
            println!("answer: {} ({})", run.outcome.answer.normalized, run.outcome.answer.confidence.as_str());
            println!("iterations: {} forced: {}", run.outcome.outer_iterations_used, run.outcome.forced);
            println!("tokens: {} in / {} out", run.ledger.input_tokens(), run.ledger.output_tokens());
        }
        Err(e) => eprintln!("episode failed: {e}"),
    }
    println!("trace: {}", store.path_for(&task.task_id).display());
}
