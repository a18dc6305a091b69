//! Scripted benchmark over a synthetic dataset, swept over the
//! outer-iteration cap. Record `qNN` needs `NN % 4` rounds of feedback
//! before its reasoner answers correctly.
//!
//! cargo run --example bench_ablation

use sirloop::backend::ChatBackend;
use sirloop::bench::{ablation_table, load_dataset, run_benchmark, BenchSettings, DatasetRecord};
use sirloop::cost::{ModelPrice, PriceTable};
use sirloop::fixtures;
use sirloop::trace::MemoryTraceStore;

fn main() {
    let dir = tempfile_dir();
    let path = fixtures::write_poster_dataset(&dir, 12).expect("writable temp dir");
    let records = load_dataset(&path).expect("valid dataset");

    let config = fixtures::offline_config();
    let prices = PriceTable::new()
        .with(config.translator.model.clone(), ModelPrice::new("0.0003".parse().unwrap(), "0.0005".parse().unwrap()))
        .with(config.reasoner.model.clone(), ModelPrice::new("0.0005".parse().unwrap(), "0.0008".parse().unwrap()));
    let settings = BenchSettings {
        config,
        toolbox: fixtures::offline_toolbox(),
        parallelism: 4,
        ablate_iters: vec![1, 2, 3],
        prices: Some(&prices),
    };
    let factory = |rec: &DatasetRecord, _cap: u32| -> Box<dyn ChatBackend + Send> {
        let rounds = (fixtures::record_index(&rec.id) % 4) as u32;
        Box::new(fixtures::feedback_rounds_script(rounds, "B", "A"))
    };
    let store = MemoryTraceStore::new();
    let reports = run_benchmark(&records, &settings, &store, &factory).expect("benchmark runs");

    println!("{}\n", reports[0].render());
    println!("{}", ablation_table(&reports));
    println!("\n{} traces recorded", store.episodes().len());
    let _ = std::fs::remove_dir_all(&dir);
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("sirloop-bench-{}", std::process::id()))
}
