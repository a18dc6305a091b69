use std::process::Command;

use rust_decimal::Decimal;

use sirloop::engine::Engine;
use sirloop::fixtures;
use sirloop::trace::{FileTraceStore, TraceStore};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sirloop"))
}

fn stdout(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn record_poster_run(runs: &std::path::Path) {
    let store = FileTraceStore::for_run(runs, "demo").unwrap();
    let engine = Engine::new(fixtures::offline_config(), fixtures::offline_toolbox()).unwrap();
    let task = fixtures::poster_task();
    let mut w = store.open_episode(&task.task_id).unwrap();
    engine.run_episode(&task, &fixtures::poster_script(), w.as_mut()).unwrap();
}

#[test]
fn trace_show_and_cost_report() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    record_poster_run(&runs);

    let shown = stdout(bin().args(["trace", "show", "poster-animal", "--run", "demo", "--runs-dir"]).arg(&runs));
    assert!(shown.contains("answer: B (forced: false)"), "{shown}");
    assert!(shown.contains("snapshots: 3"), "{shown}");

    let raw = stdout(bin().args(["trace", "show", "poster-animal", "--run", "demo", "--raw", "--runs-dir"]).arg(&runs));
    assert_eq!(raw.lines().count(), 18);

    let prices = dir.path().join("prices.toml");
    std::fs::write(
        &prices,
        "[\"qwen2.5-vl-3b-instruct\"]\ninput_per_1k = \"0.0003\"\noutput_per_1k = \"0.0005\"\n\n[\"qwen3-8b\"]\ninput_per_1k = 0.0005\noutput_per_1k = 0.0008\n",
    )
    .unwrap();
    let report = stdout(bin().args(["cost", "report", "demo", "--prices"]).arg(&prices).arg("--runs-dir").arg(&runs));
    // translator 4700 in / 179 out, reasoner 700 in / 40 out
    let total = report.lines().find(|l| l.starts_with("TOTAL")).unwrap();
    let cols: Vec<Decimal> = total.split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
    let want: Vec<Decimal> = ["0.00176", "0.0001215", "0.0018815"].iter().map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols, want);
}

#[test]
fn missing_run_and_bad_options_fail() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("p.json");
    std::fs::write(&prices, "{}").unwrap();
    let out = bin().args(["cost", "report", "nope", "--prices"]).arg(&prices).arg("--runs-dir").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());

    let img = dir.path().join("x.png");
    std::fs::write(&img, fixtures::poster_png()).unwrap();
    let out = bin()
        .args(["ask", "--question", "q", "--options", "no-colon", "--image"])
        .arg(&img)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LABEL:TEXT"));
}

#[test]
fn sample_config_is_the_default() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/config.toml");
    let cfg = sirloop::config::RunConfig::load(&path).unwrap();
    assert_eq!(cfg, sirloop::config::RunConfig::default());
}
