//! Checks shared by the acceptance runner and the per-area test files.
//! Each returns a short detail line on success and the reason on failure.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde_json::json;

use sirloop::backend::{BackendError, CallPurpose, ChatBackend, ChatRequest, ChatResponse, ScriptMatch, ScriptedBackend};
use sirloop::bench::{ablation_table, run_benchmark, BenchReport, BenchSettings, DatasetRecord};
use sirloop::config::RunConfig;
use sirloop::cost::{cost_by_iteration, total_cost, CostBreakdown, CostLedger, LedgerEntry, ModelPrice, PriceTable};
use sirloop::engine::{EpisodeContext, Engine};
use sirloop::fixtures;
use sirloop::reasoner::{decide_terminal, TerminalGate};
use sirloop::sir::{Sir, SirConfidence, SirError, StepLabel};
use sirloop::toolbox::grid_partition;
use sirloop::trace::{mask_all, EventKind, FileTraceStore, MemoryTraceStore, TraceEvent, TraceStore};
use sirloop::translator::confidence_score;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(took)
}

// ---------------------------------------------------------------- traces

/// seq runs 1..=n within one episode; every tool_call is closed by exactly
/// one later tool_result or terminal_action with the same call id; snapshot
/// labels strictly increase; exactly one event carries the final answer.
pub fn check_trace_order(events: &[TraceEvent]) -> Result<(), String> {
    ensure!(!events.is_empty(), "empty trace");
    let id = &events[0].episode_id;
    let mut open: HashMap<String, u64> = HashMap::new();
    let mut closed: HashMap<String, u64> = HashMap::new();
    let mut last_label: Option<StepLabel> = None;
    let mut finals = 0;
    for (i, e) in events.iter().enumerate() {
        ensure!(e.seq == i as u64 + 1, "seq {} at position {}", e.seq, i);
        ensure!(&e.episode_id == id, "event {} belongs to {}", e.seq, e.episode_id);
        ensure!(e.iter().is_some(), "event {} lacks iter", e.seq);
        let call_id = e.str_field("call_id").map(str::to_string);
        match e.kind {
            EventKind::ToolCall => {
                let cid = call_id.ok_or(format!("tool_call {} without call_id", e.seq))?;
                ensure!(open.insert(cid.clone(), e.seq).is_none(), "call id {cid} reused");
            }
            EventKind::ToolResult | EventKind::TerminalAction if call_id.is_some() => {
                let cid = call_id.unwrap();
                ensure!(open.contains_key(&cid), "{:?} {} closes unknown call {cid}", e.kind, e.seq);
                ensure!(closed.insert(cid.clone(), e.seq).is_none(), "call {cid} closed twice");
            }
            EventKind::SirSnapshot => {
                let label: StepLabel = serde_json::from_value(e.payload["snapshot"]["label"].clone())
                    .map_err(|err| format!("snapshot {}: {err}", e.seq))?;
                if let Some(prev) = last_label {
                    ensure!(label > prev, "snapshot label {label:?} after {prev:?}");
                }
                last_label = Some(label);
            }
            _ => {}
        }
        let is_final = e.kind == EventKind::ForceAnswer
            || (e.kind == EventKind::TerminalAction && e.str_field("action") == Some("answer"));
        if is_final {
            finals += 1;
        }
    }
    for (cid, seq) in &open {
        ensure!(closed.contains_key(cid), "tool_call {seq} ({cid}) never closed");
    }
    ensure!(finals == 1, "{finals} answer events");
    Ok(())
}

// ---------------------------------------------------------------- golden

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/poster_episode.trace.jsonl")
}

pub fn golden_trace() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = FileTraceStore::new(dir.path()).map_err(|e| e.to_string())?;
    let engine = Engine::new(fixtures::offline_config(), fixtures::offline_toolbox()).map_err(|e| e.to_string())?;
    let task = fixtures::poster_task();
    let backend = fixtures::poster_script();
    let mut writer = store.open_episode(&task.task_id).map_err(|e| e.to_string())?;
    let run = engine
        .run_episode(&task, &backend, writer.as_mut())
        .map_err(|e| e.to_string())?;
    drop(writer);
    let took = within(Duration::from_secs(1), started)?;

    ensure!(run.outcome.answer.normalized == "B", "answer {:?}", run.outcome.answer.normalized);
    ensure!(!run.outcome.forced && run.outcome.outer_iterations_used == 1, "not a single-iteration answer");
    ensure!(run.backend_calls == 6, "{} backend calls", run.backend_calls);
    ensure!(backend.remaining() == 0, "{} scripted replies unused", backend.remaining());
    let captions: Vec<&str> = run.snapshots.iter().map(|s| s.sir.global_caption.as_str()).collect();
    ensure!(captions.len() == 3, "{} snapshots", captions.len());
    ensure!(captions[1].contains("church") && captions[1].contains("dove"), "refined SIR lacks the zoomed detail");

    let lines = store.read_lines(&task.task_id).map_err(|e| e.to_string())?;
    let events = store.read_events(&task.task_id).map_err(|e| e.to_string())?;
    check_trace_order(&events)?;
    let region_caption = events.iter().any(|e| {
        e.kind == EventKind::ToolResult && e.payload.to_string().contains("region (2,1): Poster featuring a person holding a dove")
    });
    ensure!(region_caption, "grid tool result does not carry the patch caption");

    let mut masked = mask_all(&lines).join("\n");
    masked.push('\n');
    let path = golden_path();
    if std::env::var("UPDATE_GOLDEN").as_deref() == Ok("1") {
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&path, &masked).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to create it)", path.display()))?;
    if golden != masked {
        let first = golden
            .lines()
            .zip(masked.lines())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| golden.lines().count().min(masked.lines().count()));
        return Err(format!("trace differs from golden file at line {}", first + 1));
    }
    Ok(format!("{} events byte-identical to golden, {took:?}", lines.len()))
}

// ---------------------------------------------------------------- fuzz

/// Answers every request with a random, often malformed, reply.
pub struct FuzzBackend {
    rng: Mutex<ChaCha8Rng>,
}

impl FuzzBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().unwrap_or("")
}

impl ChatBackend for FuzzBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut rng = self.rng.lock().unwrap();
        let conf = pick(&mut rng, &["low", "mid", "high", "certain", "HIGH"]);
        let garbage = pick(&mut rng, &["", "I am not sure.", "{not json", "{\"name\": 3}", "```json\n{}\n```"]);
        let resp = match request.purpose {
            CallPurpose::TranslatorStep => match rng.gen_range(0..10) {
                0 => ChatResponse::tool_call(Some("read"), "ocr", json!({})),
                1 => ChatResponse::tool_call(Some("table"), "read_table", json!({})),
                2 => ChatResponse::tool_call(Some("zoom"), "smart_grid_caption", json!({"query": "the poster"})),
                3 => ChatResponse::tool_call(None, "smart_grid_caption", json!({"q": 1})),
                4 | 5 => fixtures::caption("a church and a poster", conf),
                6 => ChatResponse::from_text(format!("{{\"global_caption\": \"bare\", \"confidence\": \"{conf}\"}}")),
                7 => ChatResponse::tool_call(None, "python_execute", json!({"code": "1"})),
                8 => ChatResponse::raw_tool_call(None, "ocr", "{broken"),
                _ => ChatResponse::from_text(garbage),
            },
            CallPurpose::RefineSir => match rng.gen_range(0..3) {
                0 => ChatResponse::from_text(garbage),
                _ => ChatResponse::from_text(format!("SIR: {{\"global_caption\": \"refined\", \"confidence\": \"{conf}\"}}")),
            },
            CallPurpose::RegionSelect => ChatResponse::from_text(pick(&mut rng, &["9", "(1,2) and [3,3]", "none", "15 14 13 12"])),
            CallPurpose::RegionCaption | CallPurpose::Ocr | CallPurpose::ReadTable => {
                ChatResponse::from_text(pick(&mut rng, &["", "a dove", "A|B\n1|2", "EXIT"]))
            }
            CallPurpose::ReasonerStep | CallPurpose::ForceAnswer => match rng.gen_range(0..9) {
                0 => ChatResponse::tool_call(Some("compute"), "python_execute", json!({"code": "print(1)"})),
                1 | 2 => fixtures::answer(pick(&mut rng, &["A", "b", "dove", "(C)", "none of these"]), pick(&mut rng, &["high", "Medium", "low", "sure"]), "r"),
                3 | 4 => fixtures::feedback("describe the poster"),
                5 => ChatResponse::tool_call(None, "terminate_and_ask_translator", json!({"feedback": "  "})),
                6 => ChatResponse::from_text("{\"answer\": \"B\", \"confidence\": \"high\", \"reasoning\": \"x\"}"),
                7 => ChatResponse::tool_call(None, "ocr", json!({})),
                _ => ChatResponse::from_text(garbage),
            },
        };
        Ok(resp.with_usage(rng.gen_range(0..2000), rng.gen_range(0..200)))
    }
}

/// Every backend call an episode can make: each policy step plus, for the
/// translator, the worst tool (grid select and three captions) and a
/// refinement, all with their retry allowance.
pub fn total_call_allowance(cfg: &RunConfig) -> u64 {
    let a = cfg.retry.max_attempts() as u64;
    let t = cfg.max_steps_translator as u64 * (a + 4 * a + a);
    let r = cfg.max_steps_reasoner as u64 * a;
    cfg.max_iters as u64 * (t + r) + a
}

pub fn fuzz_episodes(n: u64) -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let toolbox = fixtures::offline_toolbox();
    let task = fixtures::poster_task();
    let mut forced = 0;
    let mut max_policy = 0;
    for ep in 0..n {
        let mut cfg = fixtures::offline_config();
        cfg.max_iters = rng.gen_range(1..=3);
        cfg.max_steps_translator = rng.gen_range(1..=3);
        cfg.max_steps_reasoner = rng.gen_range(1..=3);
        let engine = Engine::new(cfg.clone(), Arc::clone(&toolbox)).map_err(|e| e.to_string())?;
        let store = MemoryTraceStore::new();
        let id = format!("fuzz-{ep}");
        let mut w = store.open_episode(&id).map_err(|e| e.to_string())?;
        let backend = FuzzBackend::new(ep);
        let run = engine
            .run_episode(&task, &backend, w.as_mut())
            .map_err(|e| format!("episode {ep}: {e}"))?;
        let a = &run.outcome.answer;
        ensure!(
            !a.normalized.is_empty() && (a.fallback || ["A", "B", "C", "D"].contains(&a.normalized.as_str())),
            "episode {ep}: answer {:?} is neither a label nor a flagged fallback",
            a.normalized
        );
        ensure!(!run.outcome.forced || run.outcome.outer_iterations_used == cfg.max_iters, "episode {ep}: forced before the cap");
        ensure!(
            run.policy_calls <= cfg.policy_call_budget(),
            "episode {ep}: {} policy calls over budget {}",
            run.policy_calls,
            cfg.policy_call_budget()
        );
        ensure!(
            run.backend_calls <= total_call_allowance(&cfg),
            "episode {ep}: {} backend calls over allowance {}",
            run.backend_calls,
            total_call_allowance(&cfg)
        );
        let events = store.read_events(&id).map_err(|e| e.to_string())?;
        check_trace_order(&events).map_err(|e| format!("episode {ep}: {e}"))?;
        forced += run.outcome.forced as u32;
        max_policy = max_policy.max(run.policy_calls);
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("{n} episodes answered, {forced} forced, max {max_policy} policy calls, {took:?}"))
}

// ---------------------------------------------------------------- cost

fn dec(s: &str) -> Decimal {
    Decimal::from_str(s).expect("decimal literal")
}

pub fn cost_table() -> Check {
    let prices = PriceTable::new()
        .with("translator-vl", ModelPrice::new(dec("0.0003"), dec("0.0005")))
        .with("reasoner-text", ModelPrice::new(dec("0.0005"), dec("0.0008")));
    let mut ledger = CostLedger::new();
    for (model, i, o) in [("translator-vl", 20_000, 2_000), ("reasoner-text", 6_000, 2_000)] {
        ledger.record(LedgerEntry {
            model: model.into(),
            outer_iteration: 1,
            input_tokens: i,
            output_tokens: o,
            approximate: false,
        });
    }
    let c = total_cost(&ledger, &prices).map_err(|e| e.to_string())?;
    ensure!(c.input_usd == dec("0.0090"), "input {}", c.input_usd);
    ensure!(c.output_usd == dec("0.0026"), "output {}", c.output_usd);
    ensure!(c.total_usd == dec("0.0116"), "total {}", c.total_usd);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models = ["m0", "m1", "m2"];
    // prices in millionths of a dollar per 1k tokens, so exact costs are
    // integers in 1e-9 dollars
    let micro: Vec<(i64, i64)> = models.iter().map(|_| (rng.gen_range(0..5_000_000), rng.gen_range(0..5_000_000))).collect();
    let table = models.iter().zip(&micro).fold(PriceTable::new(), |t, (m, &(pi, po))| {
        t.with(*m, ModelPrice::new(Decimal::new(pi, 6), Decimal::new(po, 6)))
    });
    let random_ledger = |rng: &mut ChaCha8Rng| {
        let mut l = CostLedger::new();
        for _ in 0..rng.gen_range(0..20) {
            l.record(LedgerEntry {
                model: models[rng.gen_range(0..3)].into(),
                outer_iteration: rng.gen_range(1..=3),
                input_tokens: rng.gen_range(0..200_000),
                output_tokens: rng.gen_range(0..20_000),
                approximate: false,
            });
        }
        l
    };
    let oracle = |l: &CostLedger| -> (Decimal, Decimal) {
        let (mut i, mut o) = (0i128, 0i128);
        for e in &l.entries {
            let k = models.iter().position(|m| *m == e.model).unwrap();
            i += e.input_tokens as i128 * micro[k].0 as i128;
            o += e.output_tokens as i128 * micro[k].1 as i128;
        }
        (Decimal::from_i128_with_scale(i, 9), Decimal::from_i128_with_scale(o, 9))
    };
    for case in 0..1000 {
        let a = random_ledger(&mut rng);
        let b = random_ledger(&mut rng);
        let ca = total_cost(&a, &table).map_err(|e| e.to_string())?;
        let cb = total_cost(&b, &table).map_err(|e| e.to_string())?;
        let (oi, oo) = oracle(&a);
        ensure!(ca.input_usd == oi && ca.output_usd == oo, "case {case}: {ca:?} vs oracle ({oi}, {oo})");
        ensure!(ca.total_usd == ca.input_usd + ca.output_usd, "case {case}: total is not input + output");
        let cab = total_cost(&a.concat(&b), &table).map_err(|e| e.to_string())?;
        ensure!(cab == ca + cb, "case {case}: cost of concatenation is not additive");
        let k = rng.gen_range(0..5u64);
        let scaled = CostLedger {
            entries: a
                .entries
                .iter()
                .map(|e| LedgerEntry {
                    input_tokens: e.input_tokens * k,
                    output_tokens: e.output_tokens * k,
                    ..e.clone()
                })
                .collect(),
        };
        let cs = total_cost(&scaled, &table).map_err(|e| e.to_string())?;
        ensure!(cs.total_usd == ca.total_usd * Decimal::from(k), "case {case}: scaling tokens by {k} is not linear");
        let by_iter = cost_by_iteration(&a, &table).map_err(|e| e.to_string())?;
        let summed = by_iter.values().fold(CostBreakdown::default(), |acc, c| acc + *c);
        ensure!(summed == ca, "case {case}: per-iteration subtotals do not sum to the total");
    }
    Ok("0.0090 + 0.0026 = 0.0116; 1000 random ledgers exact".into())
}

// ---------------------------------------------------------------- grid

/// Expected spans for one axis, written independently of the library:
/// three spans of floor(len/4) and a last one absorbing the remainder.
fn expected_spans(len: u32) -> Vec<(u32, u32)> {
    let q = len / 4;
    vec![(0, q), (q, 2 * q), (2 * q, 3 * q), (3 * q, len)]
}

fn raster_check(w: u32, h: u32, rects: &[(u32, u32, u32, u32)]) -> Result<(), String> {
    let mut hits = vec![0u8; (w * h) as usize];
    for &(x0, y0, x1, y1) in rects {
        for y in y0..y1 {
            for x in x0..x1 {
                hits[(y * w + x) as usize] += 1;
            }
        }
    }
    ensure!(hits.iter().all(|&c| c == 1), "({w},{h}): some pixel is covered {} times", hits.iter().find(|&&c| c != 1).unwrap());
    Ok(())
}

pub fn grid_geometry(n: usize) -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut sizes: Vec<(u32, u32)> = vec![(4, 4), (400, 400), (401, 403), (4096, 4096), (4, 4096), (7, 5)];
    while sizes.len() < n {
        sizes.push((rng.gen_range(4..=4096), rng.gen_range(4..=4096)));
    }
    let mut rastered = 0;
    for &(w, h) in &sizes {
        let regions = grid_partition(w, h).map_err(|e| e.to_string())?;
        ensure!(regions.len() == 16, "({w},{h}): {} regions", regions.len());
        let xs = expected_spans(w);
        let ys = expected_spans(h);
        let mut rects = Vec::with_capacity(16);
        for (i, r) in regions.iter().enumerate() {
            ensure!((r.row, r.col) == (i as u32 / 4, i as u32 % 4), "({w},{h}): region {i} is not row-major");
            let p = r.pixel_rect;
            let (ex, ey) = (xs[r.col as usize], ys[r.row as usize]);
            ensure!((p.x0, p.x1, p.y0, p.y1) == (ex.0, ex.1, ey.0, ey.1), "({w},{h}): region {i} is {p:?}");
            rects.push((p.x0, p.y0, p.x1, p.y1));
        }
        // Pixel (x, y) lies in exactly one rect iff x lies in exactly one
        // column span and y in exactly one row span, since every rect is a
        // column span times a row span and all 16 pairs occur once.
        for (len, spans) in [(w, &xs), (h, &ys)] {
            let mut cover = vec![0u8; len as usize];
            for &(a, b) in spans.iter() {
                for c in &mut cover[a as usize..b as usize] {
                    *c += 1;
                }
            }
            ensure!(cover.iter().all(|&c| c == 1), "({w},{h}): axis of length {len} not tiled");
        }
        let area: u64 = regions.iter().map(|r| r.pixel_rect.area()).sum();
        ensure!(area == w as u64 * h as u64, "({w},{h}): area {area}");
        if w as u64 * h as u64 <= 1 << 16 || rastered < 20 {
            raster_check(w, h, &rects)?;
            rastered += 1;
        }
    }
    ensure!(grid_partition(3, 100).is_err() && grid_partition(100, 3).is_err(), "sizes under 4 accepted");
    let took = within(Duration::from_secs(5), started)?;
    Ok(format!("{} sizes tiled exactly ({rastered} full-raster), {took:?}", sizes.len()))
}

// ---------------------------------------------------------------- sir

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let pieces = ["a", "church", " ", "\"", "{", "}", "\\", "\n", "é", "鸽", "0.5", "|", "\t", "🕊"];
    (0..rng.gen_range(0..30)).map(|_| *pieces.choose(rng).unwrap()).collect()
}

pub fn sir_schema() -> Check {
    let s = Sir::parse(r#"{"global_caption":"church building with a poster","confidence":"mid"}"#).map_err(|e| e.to_string())?;
    ensure!(s == Sir::new("church building with a poster", SirConfidence::Mid), "example parsed as {s:?}");
    let with_fb = Sir::parse(r#"{"global_caption":"g","confidence":"low","feedback":"what animal?"}"#).map_err(|e| e.to_string())?;
    ensure!(with_fb.feedback.as_deref() == Some("what animal?"), "feedback field lost");
    let embedded = Sir::parse(r#"Here is my SIR: {"global_caption":"two bars, labels A and B","confidence":"high"} Done."#)
        .map_err(|e| e.to_string())?;
    ensure!(embedded.confidence == SirConfidence::High, "embedded object not found");
    ensure!(
        matches!(Sir::parse(r#"{"global_caption":"x"}"#), Err(SirError::MissingField("confidence"))),
        "missing confidence accepted"
    );
    for bad in ["certain", "low/mid/high", "HIGH", "medium"] {
        let doc = json!({"global_caption": "x", "confidence": bad}).to_string();
        ensure!(matches!(Sir::parse(&doc), Err(SirError::BadEnum(_))), "confidence {bad:?} accepted");
    }
    ensure!(matches!(Sir::parse("no json here"), Err(SirError::Unparseable)), "prose accepted");

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let mut sir = Sir::new(format!("c{}", random_text(&mut rng)), *SirConfidence::ALL.choose(&mut rng).unwrap());
        if rng.gen_bool(0.5) {
            sir.feedback = Some(format!("fb{}", random_text(&mut rng)));
        }
        let bytes = sir.to_canonical_json();
        let back = Sir::parse(&bytes).map_err(|e| format!("round trip {i}: {e} on {bytes}"))?;
        ensure!(back == sir, "round trip {i} changed the SIR");
        ensure!(back.to_canonical_json() == bytes, "round trip {i} is not byte-stable");
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&bytes)
            .map_err(|e| e.to_string())?
            .keys()
            .cloned()
            .collect();
        let order: Vec<usize> = ["global_caption", "confidence", "feedback"]
            .iter()
            .filter_map(|k| bytes.find(&format!("\"{k}\":")))
            .collect();
        ensure!(order.windows(2).all(|w| w[0] < w[1]) && order.len() == keys.len(), "round trip {i}: key order in {bytes}");
    }
    Ok("examples parse, bad documents rejected, 1000 byte-stable round trips".into())
}

// ---------------------------------------------------------------- thresholds

/// Runs the translator loop where every step is an OCR call whose
/// refinement comes back at `level`; returns how many steps ran.
fn translator_steps_at(level: &str) -> Result<usize, String> {
    let engine = Engine::new(fixtures::offline_config(), fixtures::offline_toolbox()).map_err(|e| e.to_string())?;
    let backend = ScriptedBackend::new();
    for _ in 0..2 {
        backend.push(ScriptMatch::contains(fixtures::TRANSLATOR_STEP), ChatResponse::tool_call(Some("read"), "ocr", json!({})));
        backend.push(ScriptMatch::contains("OCR TASK"), ChatResponse::from_text("CHURCH"));
        backend.push(
            ScriptMatch::contains(fixtures::REFINE),
            ChatResponse::from_text(json!({"global_caption": "a church sign", "confidence": level}).to_string()),
        );
    }
    backend.push(ScriptMatch::contains(fixtures::TRANSLATOR_STEP), fixtures::caption("a church sign", level));
    let store = MemoryTraceStore::new();
    let mut w = store.open_episode("t").map_err(|e| e.to_string())?;
    let ctx = EpisodeContext::new(&backend, w.as_mut(), fixtures::offline_config().retry);
    let out = engine
        .translator_inner_loop(&ctx, &fixtures::poster_task(), &Sir::initial(), 1)
        .map_err(|e| e.to_string())?;
    Ok(out.steps.len())
}

pub fn thresholds() -> Check {
    let expect = [(SirConfidence::Low, 0.3), (SirConfidence::Mid, 0.6), (SirConfidence::High, 0.9)];
    for (level, score) in expect {
        ensure!(confidence_score(level) == score, "{level:?} maps to {}", confidence_score(level));
    }
    for (level, steps) in [("low", 3), ("mid", 3), ("high", 1)] {
        let got = translator_steps_at(level)?;
        ensure!(got == steps, "translator ran {got} steps at {level}, expected {steps}");
    }
    let cfg = fixtures::offline_config();
    for outer in 1..=cfg.max_iters {
        for score in [0.0, 0.3, 0.6, 0.89, 0.9, 1.0] {
            let gate = decide_terminal(score, 1, outer, &cfg);
            let must = score >= 0.9 || outer == cfg.max_iters;
            ensure!(
                (gate == TerminalGate::MustAnswer) == must,
                "outer {outer}, score {score}: got {gate:?}"
            );
        }
    }
    Ok("0.3/0.6/0.9 mapping, early exit only on high, compelled at the last iteration".into())
}

// ---------------------------------------------------------------- harness

pub fn scripted_records(n: usize) -> Result<(tempfile::TempDir, Vec<DatasetRecord>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = fixtures::write_poster_dataset(dir.path(), n).map_err(|e| e.to_string())?;
    let records = sirloop::bench::load_dataset(&path).map_err(|e| e.to_string())?;
    Ok((dir, records))
}

fn settings(parallelism: usize, ablate: Vec<u32>, prices: Option<&PriceTable>) -> BenchSettings<'_> {
    BenchSettings {
        config: fixtures::offline_config(),
        toolbox: fixtures::offline_toolbox(),
        parallelism,
        ablate_iters: ablate,
        prices,
    }
}

/// Record `i` needs `i % 4` feedback rounds before answering correctly.
pub fn rounds_factory(rec: &DatasetRecord, _cap: u32) -> Box<dyn ChatBackend + Send> {
    let rounds = (fixtures::record_index(&rec.id) % 4) as u32;
    Box::new(fixtures::feedback_rounds_script(rounds, "B", "A"))
}

pub fn harness() -> Check {
    let (_dir, records) = scripted_records(10)?;
    let store = MemoryTraceStore::new();
    // records 0..7 answer B (gold), the rest answer C
    let seven = |rec: &DatasetRecord, _: u32| -> Box<dyn ChatBackend + Send> {
        let label = if fixtures::record_index(&rec.id) < 7 { "B" } else { "C" };
        Box::new(fixtures::feedback_rounds_script(0, label, "A"))
    };
    let reports = run_benchmark(&records, &settings(2, vec![], None), &store, &seven).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 1, "{} reports", reports.len());
    let r = &reports[0];
    ensure!(r.accuracy_percent.to_string() == "70.00", "accuracy {}", r.accuracy_percent);
    ensure!((r.n_correct, r.n_total) == (7, 10), "{}/{}", r.n_correct, r.n_total);

    let store = MemoryTraceStore::new();
    let reports = run_benchmark(&records, &settings(2, vec![1, 2, 3], None), &store, &rounds_factory).map_err(|e| e.to_string())?;
    let acc: Vec<String> = reports.iter().map(|r| r.accuracy_percent.to_string()).collect();
    ensure!(acc == ["30.00", "60.00", "80.00"], "ablation accuracies {acc:?}");
    ensure!(
        reports.windows(2).all(|w| w[0].accuracy_percent < w[1].accuracy_percent),
        "ablation is not strictly increasing"
    );
    let table = ablation_table(&reports);
    ensure!(
        table.starts_with("| Max iterations | 1 | 2 | 3 |\n|---|---|---|---|\n| Accuracy (%) | 30.00 | 60.00 | 80.00 |"),
        "table layout:\n{table}"
    );
    ensure!(store.episodes().len() == 30, "{} traces stored", store.episodes().len());
    Ok(format!("70.00% on the 7/10 script; ablation {}", acc.join(" < ")))
}

pub fn determinism() -> Check {
    let (_dir, records) = scripted_records(24)?;
    let prices = PriceTable::new()
        .with("qwen2.5-vl-3b-instruct", ModelPrice::new(dec("0.0003"), dec("0.0005")))
        .with("qwen3-8b", ModelPrice::new(dec("0.0005"), dec("0.0008")));
    let mut runs: BTreeMap<usize, Vec<BenchReport>> = BTreeMap::new();
    for p in [1, 4] {
        let store = MemoryTraceStore::new();
        let reports = run_benchmark(&records, &settings(p, vec![1, 3], Some(&prices)), &store, &rounds_factory)
            .map_err(|e| e.to_string())?;
        runs.insert(p, reports);
    }
    ensure!(runs[&1] == runs[&4], "reports differ between parallelism 1 and 4");
    ensure!(runs[&1].iter().all(|r| r.cost.is_some()), "costs missing");
    let ids: Vec<&str> = runs[&4][0].rows.iter().map(|r| r.id.as_str()).collect();
    ensure!(ids.windows(2).all(|w| w[0] < w[1]), "rows not sorted by id");
    Ok(format!("{} records x 2 caps identical at parallelism 1 and 4", records.len()))
}
