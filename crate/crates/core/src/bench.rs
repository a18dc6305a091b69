//! Dataset ingestion, batch runs, accuracy and cost reports, and the
//! outer-iteration ablation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::config::RunConfig;
use crate::cost::{total_cost, PriceTable};
use crate::engine::Engine;
use crate::reasoner::FinalAnswer;
use crate::task::{ImageInput, OptionChoice, Task};
use crate::toolbox::Toolbox;
use crate::trace::TraceStore;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<OptionChoice>,
    pub image_path: PathBuf,
    pub gold: String,
}

impl DatasetRecord {
    pub fn to_task(&self) -> Result<Task, String> {
        let image = ImageInput::from_path(&self.image_path).map_err(|e| format!("reading image: {e}"))?;
        Task::new(&self.id, &self.question, self.options.clone(), image).map_err(|e| e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("record `{0}`: image missing or not decodable")]
    MissingImage(String),
    #[error("record `{0}`: gold answer is not one of the option labels")]
    BadGold(String),
    #[error("record `{0}` appears twice")]
    DuplicateId(String),
}

/// Options may be written as `[{"label": "A", "text": ".."}]` or as a map
/// `{"A": ".."}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawOptions {
    List(Vec<OptionChoice>),
    Map(serde_json::Map<String, serde_json::Value>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question: String,
    #[serde(default)]
    options: Option<RawOptions>,
    #[serde(alias = "image_path")]
    image: PathBuf,
    gold: String,
}

fn convert_options(raw: Option<RawOptions>) -> Result<Vec<OptionChoice>, String> {
    match raw {
        None => Ok(Vec::new()),
        Some(RawOptions::List(v)) => Ok(v),
        Some(RawOptions::Map(m)) => m
            .into_iter()
            .map(|(label, v)| match v {
                serde_json::Value::String(text) => Ok(OptionChoice::new(label, text)),
                other => Err(format!("option `{label}` is not a string: {other}")),
            })
            .collect(),
    }
}

/// Reads a JSON-lines dataset. Image paths are resolved relative to the
/// dataset file. The first bad record aborts the load.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DatasetError::ParseError { line: line_no, message };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let options = convert_options(raw.options).map_err(parse_err)?;
        let record = DatasetRecord {
            image_path: base.join(&raw.image),
            id: raw.id,
            question: raw.question,
            options,
            gold: raw.gold,
        };
        if record.question.trim().is_empty() {
            return Err(parse_err("empty question".into()));
        }
        let mut labels = HashSet::new();
        if !record.options.iter().all(|o| labels.insert(o.label.as_str())) {
            return Err(parse_err("duplicate option label".into()));
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        if image::image_dimensions(&record.image_path).is_err() {
            return Err(DatasetError::MissingImage(record.id));
        }
        if !record.options.is_empty() && !labels.contains(record.gold.as_str()) {
            return Err(DatasetError::BadGold(record.id));
        }
        out.push(record);
    }
    Ok(out)
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Multiple choice: exact match of the normalized answer (a fallback
/// answer only counts when it happens to equal the gold string).
/// Open-ended: case-insensitive match after collapsing whitespace.
pub fn score_prediction(pred: &FinalAnswer, gold: &str, options: &[OptionChoice]) -> bool {
    if options.is_empty() {
        squash(&pred.normalized) == squash(gold)
    } else {
        pred.normalized == gold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRow {
    pub id: String,
    pub predicted: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub fallback: bool,
    pub cost_usd: Option<Decimal>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub outer_iterations_used: u32,
    pub forced: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostStats {
    pub mean_usd: Decimal,
    pub median_usd: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchReport {
    pub max_iters: u32,
    pub n_total: usize,
    pub n_correct: usize,
    pub accuracy_percent: Decimal,
    /// Over rows with a known cost; absent without a price table.
    pub cost: Option<CostStats>,
    /// Sorted by record id.
    pub rows: Vec<BenchRow>,
}

/// `100 * correct / total`, two decimals.
pub fn accuracy_percent(n_correct: usize, n_total: usize) -> Decimal {
    if n_total == 0 {
        return Decimal::new(0, 2);
    }
    let mut d = (Decimal::from(100 * n_correct as u64) / Decimal::from(n_total as u64)).round_dp(2);
    d.rescale(2);
    d
}

/// For even counts the lower of the two middle values.
pub fn lower_median(values: &[Decimal]) -> Option<Decimal> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort();
    Some(v[(v.len() - 1) / 2])
}

pub fn cost_stats(values: &[Decimal]) -> Option<CostStats> {
    let median_usd = lower_median(values)?;
    let sum: Decimal = values.iter().sum();
    Some(CostStats {
        mean_usd: (sum / Decimal::from(values.len() as u64))
            .round_dp(crate::cost::MONEY_SCALE)
            .normalize(),
        median_usd,
    })
}

impl BenchReport {
    pub fn from_rows(max_iters: u32, mut rows: Vec<BenchRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let n_total = rows.len();
        let n_correct = rows.iter().filter(|r| r.correct).count();
        let costs: Vec<Decimal> = rows.iter().filter_map(|r| r.cost_usd).collect();
        Self {
            max_iters,
            n_total,
            n_correct,
            accuracy_percent: accuracy_percent(n_correct, n_total),
            cost: cost_stats(&costs),
            rows,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:<10} {:<6} {:<7} {:<5} {:<6} {:>14}", "id", "predicted", "gold", "correct", "iters", "forced", "cost_usd");
        for r in &self.rows {
            let pred = r.predicted.clone().unwrap_or_else(|| "-".into());
            let cost = r.cost_usd.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<16} {:<10} {:<6} {:<7} {:<5} {:<6} {:>14}{}",
                r.id,
                truncate(&pred, 10),
                truncate(&r.gold, 6),
                r.correct,
                r.outer_iterations_used,
                r.forced,
                cost,
                r.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default()
            );
        }
        let _ = write!(
            out,
            "max_iters={} accuracy={}% ({}/{})",
            self.max_iters, self.accuracy_percent, self.n_correct, self.n_total
        );
        if let Some(c) = &self.cost {
            let _ = write!(out, " mean_cost=${} median_cost=${}", c.mean_usd, c.median_usd);
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// One column per outer-iteration cap.
pub fn ablation_table(reports: &[BenchReport]) -> String {
    let mut header = String::from("| Max iterations |");
    let mut sep = String::from("|---|");
    let mut acc = String::from("| Accuracy (%) |");
    let mut cost = String::from("| Mean cost (USD) |");
    for r in reports {
        let _ = write!(header, " {} |", r.max_iters);
        sep.push_str("---|");
        let _ = write!(acc, " {} |", r.accuracy_percent);
        let _ = write!(cost, " {} |", r.cost.map(|c| c.mean_usd.to_string()).unwrap_or_else(|| "-".into()));
    }
    format!("{header}\n{sep}\n{acc}\n{cost}")
}

/// Builds the backend for one episode. Called once per record and cap, so
/// scripted backends can hand out a fresh queue each time.
pub type BackendFactory<'a> = dyn Fn(&DatasetRecord, u32) -> Box<dyn ChatBackend + Send> + Sync + 'a;

pub struct BenchSettings<'a> {
    pub config: RunConfig,
    pub toolbox: Arc<Toolbox>,
    pub parallelism: usize,
    /// Empty means a single run at `config.max_iters`.
    pub ablate_iters: Vec<u32>,
    pub prices: Option<&'a PriceTable>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn episode_id(record: &DatasetRecord, cap: u32, ablating: bool) -> String {
    if ablating {
        format!("{}.iters-{cap}", record.id)
    } else {
        record.id.clone()
    }
}

fn run_record(
    engine: &Engine,
    record: &DatasetRecord,
    episode: &str,
    store: &dyn TraceStore,
    factory: &BackendFactory<'_>,
    prices: Option<&PriceTable>,
) -> BenchRow {
    let mut row = BenchRow {
        id: record.id.clone(),
        predicted: None,
        gold: record.gold.clone(),
        correct: false,
        fallback: false,
        cost_usd: None,
        input_tokens: 0,
        output_tokens: 0,
        outer_iterations_used: 0,
        forced: false,
        error: None,
    };
    let task = match record.to_task() {
        Ok(t) => t,
        Err(e) => {
            row.error = Some(e);
            return row;
        }
    };
    let mut writer = match store.open_episode(episode) {
        Ok(w) => w,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let backend = factory(record, engine.config().max_iters);
    match engine.run_episode(&task, backend.as_ref(), writer.as_mut()) {
        Ok(run) => {
            let answer = &run.outcome.answer;
            row.correct = score_prediction(answer, &record.gold, &record.options);
            row.predicted = Some(answer.normalized.clone());
            row.fallback = answer.fallback;
            row.outer_iterations_used = run.outcome.outer_iterations_used;
            row.forced = run.outcome.forced;
            row.input_tokens = run.ledger.input_tokens();
            row.output_tokens = run.ledger.output_tokens();
            row.cost_usd = prices.and_then(|p| total_cost(&run.ledger, p).ok()).map(|c| c.total_usd);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every record to completion, once per cap. Per-episode failures
/// become incorrect rows; the batch itself never fails midway.
pub fn run_benchmark(
    dataset: &[DatasetRecord],
    settings: &BenchSettings<'_>,
    store: &dyn TraceStore,
    factory: &BackendFactory<'_>,
) -> Result<Vec<BenchReport>, BenchError> {
    if settings.parallelism == 0 {
        return Err(BenchError::ZeroParallelism);
    }
    let ablating = !settings.ablate_iters.is_empty();
    let caps = if ablating {
        settings.ablate_iters.clone()
    } else {
        vec![settings.config.max_iters]
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;

    let mut reports = Vec::with_capacity(caps.len());
    for cap in caps {
        let mut config = settings.config.clone();
        config.max_iters = cap;
        let engine = Engine::new(config, Arc::clone(&settings.toolbox))?;
        let rows: Vec<BenchRow> = pool.install(|| {
            dataset
                .par_iter()
                .map(|rec| run_record(&engine, rec, &episode_id(rec, cap, ablating), store, factory, settings.prices))
                .collect()
        });
        reports.push(BenchReport::from_rows(cap, rows));
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub run_id: String,
    pub reports: Vec<BenchReport>,
}

pub fn write_summary(dir: &Path, summary: &BenchSummary) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("summary.json");
    let body = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    std::fs::write(&path, body + "\n")?;
    Ok(path)
}
