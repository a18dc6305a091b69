use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use sirloop::backend::HttpBackend;
use sirloop::backend::ChatBackend;
use sirloop::bench::{ablation_table, load_dataset, run_benchmark, write_summary, BenchSettings, BenchSummary};
use sirloop::config::RunConfig;
use sirloop::cost::{cost_by_iteration, total_cost, CostBreakdown, PriceTable};
use sirloop::engine::Engine;
use sirloop::task::{parse_option_arg, ImageInput, Task};
use sirloop::toolbox::python::{NoSandbox, PythonRunner, SubprocessRunner};
use sirloop::toolbox::Toolbox;
use sirloop::trace::{ledger_from_events, replay, FileTraceStore, TraceStore};

#[derive(Parser)]
#[command(name = "sirloop", version, about = "Two-agent visual question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for per-run trace folders.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question about one image.
    Ask {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        question: String,
        /// Repeatable, e.g. `--options "A:a cat"`.
        #[arg(long = "options", value_name = "LABEL:TEXT")]
        options: Vec<String>,
        #[arg(long)]
        max_iters: Option<u32>,
        #[arg(long, default_value = "ask")]
        run_id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a JSON-lines dataset and report accuracy.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated outer-iteration caps, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        ablate_iters: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Where summary.json is written; defaults to the run's trace folder.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, default_value = "bench")]
        run_id: String,
        #[command(flatten)]
        common: Common,
    },
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
    Cost {
        #[command(subcommand)]
        command: CostCommand,
    },
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Print the events of one episode and its replayed outcome.
    Show {
        episode_id: String,
        #[arg(long, default_value = "ask")]
        run: String,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Print raw JSON lines instead of the summary view.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    /// Price every episode of a run from its trace.
    Report {
        run_id: String,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, String> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn toolbox_for(config: &RunConfig) -> Arc<Toolbox> {
    let runner: Arc<dyn PythonRunner> = if config.sandbox_command.is_empty() {
        Arc::new(NoSandbox)
    } else {
        Arc::new(SubprocessRunner::new(config.sandbox_command.clone()))
    };
    Arc::new(Toolbox::with_runner(runner))
}

fn ask(
    image: &Path,
    question: &str,
    options: &[String],
    max_iters: Option<u32>,
    run_id: &str,
    common: &Common,
) -> Result<(), String> {
    let mut config = load_config(common.config.as_deref())?;
    if let Some(k) = max_iters {
        config.max_iters = k;
    }
    let options = options
        .iter()
        .map(|o| parse_option_arg(o).ok_or_else(|| format!("bad option `{o}`, expected LABEL:TEXT")))
        .collect::<Result<Vec<_>, _>>()?;
    let img = ImageInput::from_path(image).map_err(|e| format!("{}: {e}", image.display()))?;
    let task = Task::new("ask", question, options, img).map_err(|e| e.to_string())?;
    let backend = HttpBackend::from_config(&config);
    let engine = Engine::new(config.clone(), toolbox_for(&config)).map_err(|e| e.to_string())?;
    let store = FileTraceStore::for_run(&common.runs_dir, run_id).map_err(|e| e.to_string())?;
    let mut writer = store.open_episode(&task.task_id).map_err(|e| e.to_string())?;
    let run = engine
        .run_episode(&task, &backend, writer.as_mut())
        .map_err(|e| e.to_string())?;
    let a = &run.outcome.answer;
    println!("answer: {}", a.normalized);
    println!("confidence: {}", a.confidence.as_str());
    if !a.reasoning.is_empty() {
        println!("reasoning: {}", a.reasoning);
    }
    println!(
        "iterations: {}  forced: {}  fallback: {}",
        run.outcome.outer_iterations_used, run.outcome.forced, a.fallback
    );
    println!("trace: {}", store.path_for(&task.task_id).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    dataset: &Path,
    ablate_iters: &[u32],
    parallelism: usize,
    out: Option<&Path>,
    prices: Option<&Path>,
    run_id: &str,
    common: &Common,
) -> Result<(), String> {
    let config = load_config(common.config.as_deref())?;
    let records = load_dataset(dataset).map_err(|e| e.to_string())?;
    let prices = prices
        .map(|p| PriceTable::load(p).map_err(|e| format!("{}: {e}", p.display())))
        .transpose()?;
    let store = FileTraceStore::for_run(&common.runs_dir, run_id).map_err(|e| e.to_string())?;
    let backend = Arc::new(HttpBackend::from_config(&config));
    let factory = move |_: &_, _| Box::new(Arc::clone(&backend)) as Box<dyn ChatBackend + Send>;
    let settings = BenchSettings {
        toolbox: toolbox_for(&config),
        config,
        parallelism,
        ablate_iters: ablate_iters.to_vec(),
        prices: prices.as_ref(),
    };
    let reports = run_benchmark(&records, &settings, &store, &factory).map_err(|e| e.to_string())?;
    for r in &reports {
        println!("{}\n", r.render());
    }
    if reports.len() > 1 {
        println!("{}", ablation_table(&reports));
    }
    let summary = BenchSummary {
        run_id: run_id.to_string(),
        reports,
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| store.dir().to_path_buf());
    let path = write_summary(&dir, &summary).map_err(|e| e.to_string())?;
    println!("summary: {}", path.display());
    Ok(())
}

fn trace_show(episode_id: &str, run: &str, runs_dir: &Path, raw: bool) -> Result<(), String> {
    let store = FileTraceStore::for_run(runs_dir, run).map_err(|e| e.to_string())?;
    if raw {
        for line in store.read_lines(episode_id).map_err(|e| e.to_string())? {
            println!("{line}");
        }
        return Ok(());
    }
    let events = store.read_events(episode_id).map_err(|e| e.to_string())?;
    for e in &events {
        let iter = e.iter().map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let detail = e
            .str_field("call_id")
            .or_else(|| e.str_field("action"))
            .or_else(|| e.str_field("purpose"))
            .unwrap_or("");
        println!("{:>5} iter={iter:<2} {:<16} {detail}", e.seq, format!("{:?}", e.kind));
    }
    match replay(&events) {
        Ok(view) => {
            println!("answer: {} (forced: {})", view.outcome.answer.normalized, view.outcome.forced);
            println!("snapshots: {}  feedback rounds: {}", view.snapshots.len(), view.feedback.len());
            if let Some(last) = view.snapshots.last() {
                println!("final caption: {}", last.sir.global_caption);
            }
        }
        Err(e) => println!("replay: {e}"),
    }
    Ok(())
}

fn cost_report(run_id: &str, prices: &Path, runs_dir: &Path) -> Result<(), String> {
    let prices = PriceTable::load(prices).map_err(|e| format!("{}: {e}", prices.display()))?;
    let store = FileTraceStore::for_run(runs_dir, run_id).map_err(|e| e.to_string())?;
    let episodes = store.episodes().map_err(|e| e.to_string())?;
    if episodes.is_empty() {
        return Err(format!("no traces under {}", store.dir().display()));
    }
    let mut grand = CostBreakdown::default();
    println!("{:<24} {:>14} {:>14} {:>14}", "episode", "input_usd", "output_usd", "total_usd");
    for id in &episodes {
        let events = store.read_events(id).map_err(|e| e.to_string())?;
        let ledger = ledger_from_events(&events);
        let c = total_cost(&ledger, &prices).map_err(|e| format!("{id}: {e}"))?;
        let approx = if ledger.any_approximate() { " (approx tokens)" } else { "" };
        println!("{id:<24} {:>14} {:>14} {:>14}{approx}", c.input_usd, c.output_usd, c.total_usd);
        for (iter, sub) in cost_by_iteration(&ledger, &prices).map_err(|e| e.to_string())? {
            println!("  iter {iter:<18} {:>14} {:>14} {:>14}", sub.input_usd, sub.output_usd, sub.total_usd);
        }
        grand = grand + c;
    }
    println!("{:<24} {:>14} {:>14} {:>14}", "TOTAL", grand.input_usd, grand.output_usd, grand.total_usd);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ask {
            image,
            question,
            options,
            max_iters,
            run_id,
            common,
        } => ask(image, question, options, *max_iters, run_id, common),
        Command::Bench {
            dataset,
            ablate_iters,
            parallelism,
            out,
            prices,
            run_id,
            common,
        } => bench(dataset, ablate_iters, *parallelism, out.as_deref(), prices.as_deref(), run_id, common),
        Command::Trace {
            command: TraceCommand::Show {
                episode_id,
                run,
                runs_dir,
                raw,
            },
        } => trace_show(episode_id, run, runs_dir, *raw),
        Command::Cost {
            command: CostCommand::Report { run_id, prices, runs_dir },
        } => cost_report(run_id, prices, runs_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
