//! The episode loop: translator and reasoner inner loops inside a bounded
//! outer feedback loop, with a forced answer after the last iteration.
//!
//! Every step is written to the trace before the next one starts.

use std::cell::{Cell, RefCell};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::backend::{call_with_retries, wire, BackendError, CallFailure, ChatBackend, ChatRequest, ChatResponse};
use crate::config::{ConfigError, RetryPolicy, RunConfig};
use crate::cost::{CostLedger, LedgerEntry};
use crate::reasoner::{
    decide_terminal, FinalAnswer, ReasonerAction, ReasonerAgent, ReasonerMemory, ReasonerStepInput,
    ReasonerStepRecord, AUTO_FEEDBACK_PREFIX,
};
use crate::sir::{Sir, SirSnapshot, SnapshotOrigin, StepLabel};
use crate::task::{Task, TaskError};
use crate::toolbox::{ToolContext, ToolResult, Toolbox, VisionSettings};
use crate::trace::{EpisodeWriter, EventKind, TraceError, TraceEvent};
use crate::translator::{
    assess_sufficiency, AgentError, RefineOutcome, TranslatorAction, TranslatorAgent, TranslatorStepInput,
    TranslatorStepRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub answer: FinalAnswer,
    pub outer_iterations_used: u32,
    /// True iff the answer came from the forced-answer call.
    pub forced: bool,
    pub trace_ref: String,
    pub cost_ref: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid task: {0}")]
    InvalidTask(#[from] TaskError),
    #[error("backend exhausted during {stage}: {source}")]
    BackendExhausted { stage: String, source: BackendError },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Result of one episode plus the bookkeeping collected while running it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub outcome: EpisodeOutcome,
    pub ledger: CostLedger,
    pub snapshots: Vec<SirSnapshot>,
    pub policy_calls: u64,
    pub backend_calls: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn redact_images(value: &mut Value) {
    match value {
        Value::String(s) if s.starts_with("data:") => {
            let media = s[5..].split(';').next().unwrap_or_default().to_string();
            let approx_bytes = s.len().saturating_sub(s.find(',').map_or(0, |i| i + 1)) / 4 * 3;
            *s = format!("<{media} image, ~{approx_bytes} bytes>");
        }
        Value::Array(items) => items.iter_mut().for_each(redact_images),
        Value::Object(map) => map.values_mut().for_each(redact_images),
        _ => {}
    }
}

/// Wire body as sent, with inline images summarized and tool schemas
/// reduced to their names.
fn request_for_trace(request: &ChatRequest) -> Value {
    let mut body = wire::request_body(request);
    redact_images(&mut body);
    if let Some(obj) = body.as_object_mut() {
        if obj.contains_key("tools") {
            let names: Vec<&str> = request.tools.iter().map(|t| t.name.as_str()).collect();
            obj.insert("tools".into(), json!(names));
        }
    }
    body
}

/// Per-episode recording state. As a [`ChatBackend`] it forwards a single
/// attempt to the real backend and logs it (one `backend_call` event and
/// one ledger entry per attempt).
pub struct EpisodeContext<'a> {
    episode_id: String,
    backend: &'a dyn ChatBackend,
    writer: RefCell<&'a mut dyn EpisodeWriter>,
    retry: RetryPolicy,
    seq: Cell<u64>,
    iter: Cell<u32>,
    ledger: RefCell<CostLedger>,
    snapshots: RefCell<Vec<SirSnapshot>>,
    storage_error: RefCell<Option<TraceError>>,
    policy_calls: Cell<u64>,
    backend_calls: Cell<u64>,
}

impl<'a> EpisodeContext<'a> {
    pub fn new(backend: &'a dyn ChatBackend, writer: &'a mut dyn EpisodeWriter, retry: RetryPolicy) -> Self {
        Self {
            episode_id: writer.episode_id().to_string(),
            backend,
            writer: RefCell::new(writer),
            retry,
            seq: Cell::new(0),
            iter: Cell::new(1),
            ledger: RefCell::new(CostLedger::new()),
            snapshots: RefCell::new(Vec::new()),
            storage_error: RefCell::new(None),
            policy_calls: Cell::new(0),
            backend_calls: Cell::new(0),
        }
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    pub fn set_iter(&self, outer_iteration: u32) {
        self.iter.set(outer_iteration);
    }

    pub fn policy_calls(&self) -> u64 {
        self.policy_calls.get()
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.get()
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.borrow().clone()
    }

    pub fn snapshots(&self) -> Vec<SirSnapshot> {
        self.snapshots.borrow().clone()
    }

    /// Appends an event; `iter` defaults to the current outer iteration.
    pub fn emit(&self, kind: EventKind, payload: Value) -> Result<(), TraceError> {
        let mut payload = match payload {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        payload.entry("iter").or_insert_with(|| json!(self.iter.get()));
        let event = TraceEvent {
            episode_id: self.episode_id.clone(),
            seq: self.seq.get() + 1,
            ts_ms: now_ms(),
            kind,
            payload: Value::Object(payload),
        };
        self.writer.borrow_mut().append(&event)?;
        self.seq.set(event.seq);
        Ok(())
    }

    pub fn snapshot(&self, sir: &Sir, label: StepLabel, origin: SnapshotOrigin) -> Result<(), TraceError> {
        let snap = SirSnapshot {
            sir: sir.clone(),
            label,
            origin,
        };
        self.emit(EventKind::SirSnapshot, json!({"snapshot": snap}))?;
        self.snapshots.borrow_mut().push(snap);
        Ok(())
    }

    /// Surfaces a storage failure hit while logging a backend call.
    pub fn check_storage(&self) -> Result<(), TraceError> {
        match self.storage_error.borrow_mut().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn abort(&self, stage: &str, source: BackendError) -> EpisodeError {
        if let Err(e) = self.check_storage() {
            return e.into();
        }
        if let Err(e) = self.emit(
            EventKind::Error,
            json!({"stage": stage, "fatal": true, "message": source.to_string()}),
        ) {
            return e.into();
        }
        EpisodeError::BackendExhausted {
            stage: stage.to_string(),
            source,
        }
    }

    /// A view that retries transport failures; handed to tools, which make
    /// plain calls.
    pub fn retrying(&self) -> RetryingBackend<'_, 'a> {
        RetryingBackend { ctx: self }
    }
}

impl ChatBackend for EpisodeContext<'_> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let result = self.backend.chat_complete(request);
        self.backend_calls.set(self.backend_calls.get() + 1);
        if request.purpose.is_policy() {
            self.policy_calls.set(self.policy_calls.get() + 1);
        }
        let (usage, response, error, latency_ms) = match &result {
            Ok(r) => (r.usage, wire::response_value(r), Value::Null, r.latency.as_millis() as u64),
            Err(e) => (Default::default(), Value::Null, json!(e.to_string()), 0),
        };
        self.ledger.borrow_mut().record(LedgerEntry {
            model: request.model.clone(),
            outer_iteration: self.iter.get(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            approximate: usage.approximate,
        });
        let logged = self.emit(
            EventKind::BackendCall,
            json!({
                "role": request.role,
                "purpose": request.purpose,
                "model": request.model,
                "call_index": self.backend_calls.get(),
                "usage": usage,
                "latency_ms": latency_ms,
                "error": error,
                "request": request_for_trace(request),
                "response": response,
            }),
        );
        if let Err(e) = logged {
            let msg = e.to_string();
            *self.storage_error.borrow_mut() = Some(e);
            return Err(BackendError::Fatal(msg));
        }
        result
    }
}

pub struct RetryingBackend<'c, 'a> {
    ctx: &'c EpisodeContext<'a>,
}

impl ChatBackend for RetryingBackend<'_, '_> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        call_with_retries(self.ctx, request, &self.ctx.retry, |r| Ok::<_, ()>(r.clone())).map_err(|f| match f {
            CallFailure::Transport(e) => e,
            CallFailure::Rejected(()) => unreachable!("every response is accepted"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorLoopResult {
    pub sir: Sir,
    pub steps: Vec<TranslatorStepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReasonerExit {
    Answer(FinalAnswer),
    Feedback { text: String, synthesized: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerLoopResult {
    pub exit: ReasonerExit,
    pub steps: Vec<ReasonerStepRecord>,
    pub tools_used: Vec<String>,
}

fn tool_result_payload(agent: &str, step: u32, call_id: &str, tool: &str, r: &ToolResult) -> Value {
    let artifacts: Vec<Value> = r
        .artifacts
        .iter()
        .map(|a| json!({"kind": a.kind, "bytes": a.bytes.len()}))
        .collect();
    json!({
        "agent": agent,
        "step": step,
        "call_id": call_id,
        "tool": tool,
        "ok": r.ok,
        "content": r.content,
        "artifacts": artifacts,
    })
}

/// Agents, tools and settings for running episodes. Share one instance
/// across threads; per-episode state lives in [`EpisodeContext`].
pub struct Engine {
    config: RunConfig,
    translator: TranslatorAgent,
    reasoner: ReasonerAgent,
    toolbox: Arc<Toolbox>,
    vision: VisionSettings,
}

impl Engine {
    pub fn new(config: RunConfig, toolbox: Arc<Toolbox>) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            translator: TranslatorAgent::new(&config, &toolbox),
            reasoner: ReasonerAgent::new(&config, &toolbox),
            vision: VisionSettings {
                model: config.translator.model.clone(),
                max_output_tokens: config.response_token_limit,
                temperature: config.temperature,
            },
            config,
            toolbox,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn translator(&self) -> &TranslatorAgent {
        &self.translator
    }

    pub fn reasoner(&self) -> &ReasonerAgent {
        &self.reasoner
    }

    pub fn run_episode(
        &self,
        task: &Task,
        backend: &dyn ChatBackend,
        writer: &mut dyn EpisodeWriter,
    ) -> Result<EpisodeRun, EpisodeError> {
        task.validate()?;
        let ctx = EpisodeContext::new(backend, writer, self.config.retry);
        let outcome = self.run_in(&ctx, task)?;
        Ok(EpisodeRun {
            outcome,
            ledger: ctx.ledger(),
            snapshots: ctx.snapshots(),
            policy_calls: ctx.policy_calls(),
            backend_calls: ctx.backend_calls(),
        })
    }

    fn run_in(&self, ctx: &EpisodeContext<'_>, task: &Task) -> Result<EpisodeOutcome, EpisodeError> {
        let max_iters = self.config.max_iters;
        let mut sir = Sir::initial();
        let mut memory = ReasonerMemory::new();
        ctx.set_iter(1);
        ctx.snapshot(&sir, StepLabel::new(1, 0), SnapshotOrigin::Initial)?;

        for i in 1..=max_iters {
            ctx.set_iter(i);
            sir = self.translator_inner_loop(ctx, task, &sir, i)?.sir;
            let reasoned = self.reasoner_inner_loop(ctx, task, &sir, &memory, i)?;
            match reasoned.exit {
                ReasonerExit::Answer(answer) => {
                    return Ok(EpisodeOutcome {
                        answer,
                        outer_iterations_used: i,
                        forced: false,
                        trace_ref: ctx.episode_id().to_string(),
                        cost_ref: ctx.episode_id().to_string(),
                    });
                }
                ReasonerExit::Feedback { text, .. } => {
                    memory.record(i, &text, &reasoned.tools_used);
                    if i < max_iters {
                        sir = sir.merge_feedback(&text).unwrap_or(sir);
                        ctx.snapshot(&sir, StepLabel::new(i + 1, 0), SnapshotOrigin::FeedbackMerged)?;
                    }
                }
            }
        }

        let answer = self.force_answer(ctx, &sir, task, &memory)?;
        Ok(EpisodeOutcome {
            answer,
            outer_iterations_used: max_iters,
            forced: true,
            trace_ref: ctx.episode_id().to_string(),
            cost_ref: ctx.episode_id().to_string(),
        })
    }

    /// Up to `max_steps_translator` steps; exits on a terminal caption, on
    /// sufficiency at or above `tau_t`, or at the cap.
    pub fn translator_inner_loop(
        &self,
        ctx: &EpisodeContext<'_>,
        task: &Task,
        sir_prev: &Sir,
        i: u32,
    ) -> Result<TranslatorLoopResult, EpisodeError> {
        let mut sir = sir_prev.clone();
        let mut steps: Vec<TranslatorStepRecord> = Vec::new();
        for j in 1..=self.config.max_steps_translator {
            let input = TranslatorStepInput {
                task,
                sir_current: &sir,
                outer_iteration: i,
                step_index: j,
                history: &steps,
            };
            let proposed = self.translator.propose_action(ctx, &input);
            ctx.check_storage()?;
            let (thought, action) = match proposed {
                Ok(p) => p,
                Err(AgentError::ActionParseFailure(msg)) => {
                    ctx.emit(EventKind::Error, json!({"stage": "translator_step", "step": j, "message": msg}))?;
                    continue;
                }
                Err(AgentError::Backend(e)) => return Err(ctx.abort("translator_step", e)),
            };
            ctx.emit(EventKind::TranslatorThought, json!({"step": j, "thought": thought}))?;
            let call_id = format!("t{i}.{j}");

            match action {
                TranslatorAction::ToolCall { tool_name, arguments } => {
                    ctx.emit(
                        EventKind::ToolCall,
                        json!({"agent": "translator", "step": j, "call_id": call_id, "tool": tool_name, "arguments": arguments}),
                    )?;
                    let retrying = ctx.retrying();
                    let tool_ctx = ToolContext {
                        image: Some(&task.image),
                        backend: &retrying,
                        vision: &self.vision,
                    };
                    let result = self.toolbox.execute(&tool_name, &arguments, &tool_ctx);
                    ctx.check_storage()?;
                    ctx.emit(EventKind::ToolResult, tool_result_payload("translator", j, &call_id, &tool_name, &result))?;

                    let refined = if result.ok {
                        self.translator.refine_sir(ctx, &sir, &thought, &result.content)
                    } else {
                        RefineOutcome {
                            sir: sir.clone(),
                            called: false,
                            failure: None,
                        }
                    };
                    ctx.check_storage()?;
                    if let Some(reason) = &refined.failure {
                        ctx.emit(EventKind::Error, json!({"stage": "refine_sir", "step": j, "message": reason}))?;
                    }
                    sir = refined.sir;
                    ctx.snapshot(&sir, StepLabel::new(i, j), SnapshotOrigin::Refined)?;
                    steps.push(TranslatorStepRecord {
                        step: j,
                        call_id,
                        thought,
                        action: TranslatorAction::ToolCall { tool_name, arguments },
                        tool_result: Some(result.content),
                        sir_after: sir.clone(),
                    });
                    if assess_sufficiency(&sir).0 >= self.config.tau_t {
                        break;
                    }
                }
                TranslatorAction::TerminateSir { sir: mut produced } => {
                    produced.feedback = sir.feedback.clone();
                    sir = produced;
                    ctx.emit(
                        EventKind::ToolCall,
                        json!({"agent": "translator", "step": j, "call_id": call_id, "tool": crate::toolbox::TERMINATE_AND_OUTPUT_CAPTION, "arguments": {"global_caption": sir.global_caption, "confidence": sir.confidence}}),
                    )?;
                    ctx.emit(
                        EventKind::TerminalAction,
                        json!({"agent": "translator", "step": j, "call_id": call_id, "action": "terminate_sir", "sir": sir}),
                    )?;
                    ctx.snapshot(&sir, StepLabel::new(i, j), SnapshotOrigin::Refined)?;
                    steps.push(TranslatorStepRecord {
                        step: j,
                        call_id,
                        thought,
                        action: TranslatorAction::TerminateSir { sir: sir.clone() },
                        tool_result: None,
                        sir_after: sir.clone(),
                    });
                    break;
                }
            }
        }
        Ok(TranslatorLoopResult { sir, steps })
    }

    /// Up to `max_steps_reasoner` steps; returns on the first terminal
    /// action. At the cap, the last thought is sent back as feedback.
    pub fn reasoner_inner_loop(
        &self,
        ctx: &EpisodeContext<'_>,
        task: &Task,
        sir: &Sir,
        memory: &ReasonerMemory,
        i: u32,
    ) -> Result<ReasonerLoopResult, EpisodeError> {
        let cap = self.config.max_steps_reasoner;
        let mut steps: Vec<ReasonerStepRecord> = Vec::new();
        let mut tools_used: Vec<String> = Vec::new();
        let mut last_thought = String::new();
        for k in 1..=cap {
            let input = ReasonerStepInput {
                task,
                sir,
                memory,
                outer_iteration: i,
                step_index: k,
                history: &steps,
            };
            let proposed = self.reasoner.propose_action(ctx, &input);
            ctx.check_storage()?;
            let (thought, action) = match proposed {
                Ok(p) => p,
                Err(AgentError::ActionParseFailure(msg)) => {
                    ctx.emit(EventKind::Error, json!({"stage": "reasoner_step", "step": k, "message": msg}))?;
                    continue;
                }
                Err(AgentError::Backend(e)) => return Err(ctx.abort("reasoner_step", e)),
            };
            ctx.emit(EventKind::ReasonerThought, json!({"step": k, "thought": thought}))?;
            if !thought.is_empty() {
                last_thought = thought.clone();
            }
            let call_id = format!("r{i}.{k}");
            let (tool, arguments) = match &action {
                ReasonerAction::ToolCall { tool_name, arguments } => (tool_name.as_str(), arguments.clone()),
                ReasonerAction::TerminateAnswer { answer, confidence, reasoning } => (
                    crate::toolbox::TERMINATE_AND_ANSWER,
                    json!({"answer": answer, "confidence": confidence, "reasoning": reasoning}),
                ),
                ReasonerAction::TerminateFeedback { feedback } => {
                    (crate::toolbox::TERMINATE_AND_ASK_TRANSLATOR, json!({"feedback": feedback}))
                }
            };
            ctx.emit(
                EventKind::ToolCall,
                json!({"agent": "reasoner", "step": k, "call_id": call_id, "tool": tool, "arguments": arguments}),
            )?;

            match action {
                ReasonerAction::ToolCall { tool_name, arguments } => {
                    let retrying = ctx.retrying();
                    let tool_ctx = ToolContext {
                        image: None,
                        backend: &retrying,
                        vision: &self.vision,
                    };
                    let result = self.toolbox.execute(&tool_name, &arguments, &tool_ctx);
                    ctx.check_storage()?;
                    ctx.emit(EventKind::ToolResult, tool_result_payload("reasoner", k, &call_id, &tool_name, &result))?;
                    if !tools_used.contains(&tool_name) {
                        tools_used.push(tool_name.clone());
                    }
                    steps.push(ReasonerStepRecord {
                        step: k,
                        call_id,
                        thought,
                        action: ReasonerAction::ToolCall { tool_name, arguments },
                        tool_result: Some(result.content),
                    });
                }
                ReasonerAction::TerminateAnswer { answer, confidence, reasoning } => {
                    let final_answer = FinalAnswer::from_terminate(&answer, confidence, &reasoning, &task.options);
                    let gate = decide_terminal(confidence.score(), k, i, &self.config);
                    ctx.emit(
                        EventKind::TerminalAction,
                        json!({"agent": "reasoner", "step": k, "call_id": call_id, "action": "answer", "gate": gate, "answer": final_answer}),
                    )?;
                    steps.push(ReasonerStepRecord {
                        step: k,
                        call_id,
                        thought,
                        action: ReasonerAction::TerminateAnswer { answer, confidence, reasoning },
                        tool_result: None,
                    });
                    return Ok(ReasonerLoopResult {
                        exit: ReasonerExit::Answer(final_answer),
                        steps,
                        tools_used,
                    });
                }
                ReasonerAction::TerminateFeedback { feedback } => {
                    ctx.emit(
                        EventKind::TerminalAction,
                        json!({"agent": "reasoner", "step": k, "call_id": call_id, "action": "feedback", "feedback": feedback}),
                    )?;
                    steps.push(ReasonerStepRecord {
                        step: k,
                        call_id,
                        thought,
                        action: ReasonerAction::TerminateFeedback { feedback: feedback.clone() },
                        tool_result: None,
                    });
                    return Ok(ReasonerLoopResult {
                        exit: ReasonerExit::Feedback {
                            text: feedback,
                            synthesized: false,
                        },
                        steps,
                        tools_used,
                    });
                }
            }
        }

        let basis = if last_thought.is_empty() {
            "no reasoning was produced"
        } else {
            last_thought.as_str()
        };
        let text = format!("{AUTO_FEEDBACK_PREFIX} {basis}");
        ctx.emit(
            EventKind::TerminalAction,
            json!({"agent": "reasoner", "step": cap, "action": "auto_feedback", "feedback": text}),
        )?;
        Ok(ReasonerLoopResult {
            exit: ReasonerExit::Feedback { text, synthesized: true },
            steps,
            tools_used,
        })
    }

    /// Total: returns the deterministic fallback when the model will not
    /// comply. Errors only on trace storage failure.
    pub fn force_answer(
        &self,
        ctx: &EpisodeContext<'_>,
        sir: &Sir,
        task: &Task,
        memory: &ReasonerMemory,
    ) -> Result<FinalAnswer, EpisodeError> {
        ctx.set_iter(self.config.max_iters);
        let forced = self.reasoner.force_answer(ctx, sir, task, memory);
        ctx.check_storage()?;
        ctx.emit(
            EventKind::ForceAnswer,
            json!({"answer": forced.answer, "fallback": forced.answer.fallback, "failure": forced.failure}),
        )?;
        Ok(forced.answer)
    }
}
