//! Append-only episode traces, one JSON object per line, and replay.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::{CostLedger, LedgerEntry};
use crate::engine::EpisodeOutcome;
use crate::reasoner::FinalAnswer;
use crate::sir::{SirSnapshot, SnapshotOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TranslatorThought,
    ToolCall,
    ToolResult,
    SirSnapshot,
    ReasonerThought,
    TerminalAction,
    BackendCall,
    ForceAnswer,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub episode_id: String,
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl TraceEvent {
    pub fn iter(&self) -> Option<u32> {
        self.payload.get("iter").and_then(Value::as_u64).map(|v| v as u32)
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("event seq {got} out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("event for episode `{got}` sent to writer for `{expected}`")]
    WrongEpisode { expected: String, got: String },
    #[error("trace storage failure: {0}")]
    StorageFailure(String),
    #[error("no trace for episode `{0}`")]
    NotFound(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::StorageFailure(e.to_string())
    }
}

/// Sink for one episode's events. Sequence numbers start at 1 and must
/// increase by exactly one.
pub trait EpisodeWriter: Send {
    fn episode_id(&self) -> &str;
    fn append(&mut self, event: &TraceEvent) -> Result<(), TraceError>;
}

pub trait TraceStore: Send + Sync {
    fn open_episode(&self, episode_id: &str) -> Result<Box<dyn EpisodeWriter>, TraceError>;
    fn read_lines(&self, episode_id: &str) -> Result<Vec<String>, TraceError>;

    fn read_events(&self, episode_id: &str) -> Result<Vec<TraceEvent>, TraceError> {
        parse_lines(&self.read_lines(episode_id)?)
    }
}

pub fn parse_lines(lines: &[String]) -> Result<Vec<TraceEvent>, TraceError> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TraceError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

struct SeqCheck {
    episode_id: String,
    next: u64,
}

impl SeqCheck {
    fn new(episode_id: &str) -> Self {
        Self {
            episode_id: episode_id.to_string(),
            next: 1,
        }
    }

    fn check(&self, event: &TraceEvent) -> Result<(), TraceError> {
        if event.episode_id != self.episode_id {
            return Err(TraceError::WrongEpisode {
                expected: self.episode_id.clone(),
                got: event.episode_id.clone(),
            });
        }
        if event.seq != self.next {
            return Err(TraceError::OutOfOrder {
                expected: self.next,
                got: event.seq,
            });
        }
        Ok(())
    }
}

fn to_line(event: &TraceEvent) -> Result<String, TraceError> {
    serde_json::to_string(event).map_err(|e| TraceError::StorageFailure(e.to_string()))
}

/// `<dir>/<episode_id>.trace.jsonl`, typically with `dir = runs/<run_id>`.
#[derive(Debug, Clone)]
pub struct FileTraceStore {
    dir: PathBuf,
}

impl FileTraceStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, TraceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn for_run(runs_root: &Path, run_id: &str) -> Result<Self, TraceError> {
        Self::new(runs_root.join(run_id))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, episode_id: &str) -> PathBuf {
        self.dir.join(format!("{episode_id}.trace.jsonl"))
    }

    /// Episode ids with a trace file in this run, sorted.
    pub fn episodes(&self) -> Result<Vec<String>, TraceError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".trace.jsonl") {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}

struct FileWriter {
    seq: SeqCheck,
    file: File,
}

impl EpisodeWriter for FileWriter {
    fn episode_id(&self) -> &str {
        &self.seq.episode_id
    }

    fn append(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        self.seq.check(event)?;
        let mut line = to_line(event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.seq.next += 1;
        Ok(())
    }
}

impl TraceStore for FileTraceStore {
    fn open_episode(&self, episode_id: &str) -> Result<Box<dyn EpisodeWriter>, TraceError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(self.path_for(episode_id))?;
        Ok(Box::new(FileWriter {
            seq: SeqCheck::new(episode_id),
            file,
        }))
    }

    fn read_lines(&self, episode_id: &str) -> Result<Vec<String>, TraceError> {
        let path = self.path_for(episode_id);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TraceError::NotFound(episode_id.to_string()),
            _ => TraceError::StorageFailure(e.to_string()),
        })?;
        Ok(BufReader::new(file).lines().collect::<Result<_, _>>()?)
    }
}

/// In-memory store; clones share contents.
#[derive(Debug, Clone, Default)]
pub struct MemoryTraceStore {
    episodes: Arc<Mutex<BTreeMap<String, Vec<String>>>>,
}

impl MemoryTraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn episodes(&self) -> Vec<String> {
        self.episodes.lock().expect("trace store lock").keys().cloned().collect()
    }
}

struct MemoryWriter {
    seq: SeqCheck,
    episodes: Arc<Mutex<BTreeMap<String, Vec<String>>>>,
}

impl EpisodeWriter for MemoryWriter {
    fn episode_id(&self) -> &str {
        &self.seq.episode_id
    }

    fn append(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        self.seq.check(event)?;
        let line = to_line(event)?;
        self.episodes
            .lock()
            .map_err(|_| TraceError::StorageFailure("store lock poisoned".into()))?
            .entry(self.seq.episode_id.clone())
            .or_default()
            .push(line);
        self.seq.next += 1;
        Ok(())
    }
}

impl TraceStore for MemoryTraceStore {
    fn open_episode(&self, episode_id: &str) -> Result<Box<dyn EpisodeWriter>, TraceError> {
        self.episodes
            .lock()
            .map_err(|_| TraceError::StorageFailure("store lock poisoned".into()))?
            .insert(episode_id.to_string(), Vec::new());
        Ok(Box::new(MemoryWriter {
            seq: SeqCheck::new(episode_id),
            episodes: Arc::clone(&self.episodes),
        }))
    }

    fn read_lines(&self, episode_id: &str) -> Result<Vec<String>, TraceError> {
        self.episodes
            .lock()
            .map_err(|_| TraceError::StorageFailure("store lock poisoned".into()))?
            .get(episode_id)
            .cloned()
            .ok_or_else(|| TraceError::NotFound(episode_id.to_string()))
    }
}

/// Zeroes wall-clock fields so traces can be compared byte for byte.
pub fn mask_timestamps(line: &str) -> String {
    let Ok(mut v) = serde_json::from_str::<TraceEvent>(line) else {
        return line.to_string();
    };
    v.ts_ms = 0;
    if let Some(obj) = v.payload.as_object_mut() {
        if obj.contains_key("latency_ms") {
            obj.insert("latency_ms".into(), Value::from(0));
        }
    }
    serde_json::to_string(&v).unwrap_or_else(|_| line.to_string())
}

pub fn mask_all(lines: &[String]) -> Vec<String> {
    lines.iter().map(|l| mask_timestamps(l)).collect()
}

/// Ledger rebuilt from `backend_call` events.
pub fn ledger_from_events(events: &[TraceEvent]) -> CostLedger {
    let mut ledger = CostLedger::new();
    for e in events.iter().filter(|e| e.kind == EventKind::BackendCall) {
        let usage = e.payload.get("usage");
        let num = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
        ledger.record(LedgerEntry {
            model: e.str_field("model").unwrap_or_default().to_string(),
            outer_iteration: e.iter().unwrap_or(0),
            input_tokens: num("input_tokens"),
            output_tokens: num("output_tokens"),
            approximate: usage
                .and_then(|u| u.get("approximate"))
                .and_then(Value::as_bool)
                .unwrap_or(false),
        });
    }
    ledger
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("trace ends without an answer")]
    IncompleteTrace,
    #[error("bad payload in event {seq}: {message}")]
    BadPayload { seq: u64, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Episode state reconstructed purely from its events.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayView {
    pub outcome: EpisodeOutcome,
    pub snapshots: Vec<SirSnapshot>,
    /// Feedback sent at the end of each outer iteration, in order.
    pub feedback: Vec<(u32, String)>,
    pub ledger: CostLedger,
}

impl ReplayView {
    pub fn refined_snapshots(&self) -> impl Iterator<Item = &SirSnapshot> {
        self.snapshots.iter().filter(|s| s.origin == SnapshotOrigin::Refined)
    }
}

fn payload_field<T: serde::de::DeserializeOwned>(e: &TraceEvent, key: &str) -> Result<T, ReplayError> {
    let v = e.payload.get(key).cloned().unwrap_or(Value::Null);
    serde_json::from_value(v).map_err(|err| ReplayError::BadPayload {
        seq: e.seq,
        message: format!("{key}: {err}"),
    })
}

pub fn replay(events: &[TraceEvent]) -> Result<ReplayView, ReplayError> {
    let mut snapshots = Vec::new();
    let mut feedback = Vec::new();
    let mut finished: Option<(FinalAnswer, u32, bool)> = None;
    let mut max_iter = 0;
    for e in events {
        max_iter = max_iter.max(e.iter().unwrap_or(0));
        match e.kind {
            EventKind::SirSnapshot => snapshots.push(payload_field::<SirSnapshot>(e, "snapshot")?),
            EventKind::TerminalAction => match e.str_field("action") {
                Some("answer") => {
                    let answer: FinalAnswer = payload_field(e, "answer")?;
                    finished = Some((answer, e.iter().unwrap_or(0), false));
                }
                Some("feedback") | Some("auto_feedback") => {
                    feedback.push((e.iter().unwrap_or(0), payload_field::<String>(e, "feedback")?));
                }
                _ => {}
            },
            EventKind::ForceAnswer => {
                let answer: FinalAnswer = payload_field(e, "answer")?;
                finished = Some((answer, e.iter().unwrap_or(0), true));
            }
            _ => {}
        }
    }
    let (answer, used, forced) = finished.ok_or(ReplayError::IncompleteTrace)?;
    let episode_id = events.first().map(|e| e.episode_id.clone()).unwrap_or_default();
    Ok(ReplayView {
        outcome: EpisodeOutcome {
            answer,
            outer_iterations_used: if used == 0 { max_iter } else { used },
            forced,
            trace_ref: episode_id.clone(),
            cost_ref: episode_id,
        },
        snapshots,
        feedback,
        ledger: ledger_from_events(events),
    })
}

pub fn replay_from_store(store: &dyn TraceStore, episode_id: &str) -> Result<ReplayView, ReplayError> {
    replay(&store.read_events(episode_id)?)
}
