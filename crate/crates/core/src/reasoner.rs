//! Reasoner policy. Text only: it reads the SIR, never the image.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::{self, RawCall};
use crate::backend::{
    call_with_retries, AgentRole, CallFailure, CallPurpose, ChatBackend, ChatRequest, ChatResponse, Message,
};
use crate::config::{RetryPolicy, RunConfig};
use crate::prompts;
use crate::sir::{balanced_objects, Sir};
use crate::task::{OptionChoice, Task};
use crate::toolbox::{self, ToolSpec, Toolbox};
use crate::translator::AgentError;

pub const MAX_DIGEST_CHARS: usize = 500;
pub const MAX_FALLBACK_CHARS: usize = 200;
pub const AUTO_FEEDBACK_PREFIX: &str = "AUTO-FEEDBACK:";
pub const OPEN_ENDED_FALLBACK: &str = "UNKNOWN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerConfidence {
    High,
    Medium,
    Low,
}

impl AnswerConfidence {
    pub const ALL: [AnswerConfidence; 3] = [AnswerConfidence::High, AnswerConfidence::Medium, AnswerConfidence::Low];

    /// Same scale as the SIR confidence levels.
    pub fn score(self) -> f64 {
        match self {
            AnswerConfidence::Low => 0.3,
            AnswerConfidence::Medium => 0.6,
            AnswerConfidence::High => 0.9,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerConfidence::High => "high",
            AnswerConfidence::Medium => "medium",
            AnswerConfidence::Low => "low",
        }
    }
}

impl fmt::Display for AnswerConfidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerConfidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(AnswerConfidence::High),
            "medium" => Ok(AnswerConfidence::Medium),
            "low" => Ok(AnswerConfidence::Low),
            other => Err(format!("confidence `{other}` is not one of high, medium, low")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReasonerAction {
    ToolCall {
        tool_name: String,
        arguments: Value,
    },
    TerminateAnswer {
        answer: String,
        confidence: AnswerConfidence,
        reasoning: String,
    },
    TerminateFeedback {
        feedback: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerStepRecord {
    pub step: u32,
    pub call_id: String,
    pub thought: String,
    pub action: ReasonerAction,
    pub tool_result: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDigest {
    pub outer_iteration: u32,
    pub digest: String,
}

/// One digest per finished outer iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerMemory {
    pub summaries: Vec<MemoryDigest>,
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ReasonerMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// `iter i: asked for <feedback> / used tools <names>`, cut to 500 chars.
    /// A later digest for the same iteration replaces the earlier one.
    pub fn record(&mut self, outer_iteration: u32, feedback: &str, tools_used: &[String]) {
        let tools = if tools_used.is_empty() {
            "none".to_string()
        } else {
            tools_used.join(", ")
        };
        let one_line = feedback.split_whitespace().collect::<Vec<_>>().join(" ");
        let full = format!("iter {outer_iteration}: asked for {one_line} / used tools {tools}");
        let digest = truncate_chars(&full, MAX_DIGEST_CHARS).to_string();
        self.summaries.retain(|d| d.outer_iteration != outer_iteration);
        self.summaries.push(MemoryDigest { outer_iteration, digest });
    }

    pub fn render(&self) -> String {
        self.summaries.iter().map(|d| format!("- {}", d.digest)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub raw: String,
    pub normalized: String,
    pub confidence: AnswerConfidence,
    pub reasoning: String,
    pub fallback: bool,
}

impl FinalAnswer {
    pub fn from_terminate(answer: &str, confidence: AnswerConfidence, reasoning: &str, options: &[OptionChoice]) -> Self {
        let (normalized, fallback) = normalize_answer(answer, options);
        Self {
            raw: answer.to_string(),
            normalized,
            confidence,
            reasoning: reasoning.to_string(),
            fallback,
        }
    }

    /// The deterministic answer used when no usable one was produced.
    pub fn deterministic_fallback(task: &Task, reason: &str) -> Self {
        let normalized = task
            .options
            .first()
            .map(|o| o.label.clone())
            .unwrap_or_else(|| OPEN_ENDED_FALLBACK.to_string());
        Self {
            raw: String::new(),
            normalized,
            confidence: AnswerConfidence::Low,
            reasoning: reason.to_string(),
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalGate {
    MustAnswer,
    MayContinue,
}

/// Answering is compelled at high confidence or on the last outer iteration.
pub fn decide_terminal(confidence_score: f64, _step_index: u32, outer_iteration: u32, config: &RunConfig) -> TerminalGate {
    if confidence_score >= config.tau_r || outer_iteration >= config.max_iters {
        TerminalGate::MustAnswer
    } else {
        TerminalGate::MayContinue
    }
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*:\s*\(?\s*([A-Za-z0-9]+)").expect("static regex"))
}

fn leading_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:([A-Z0-9]+)\.|\(([A-Za-z0-9]+)\))").expect("static regex"))
}

/// Maps a raw answer onto an option label; first matching rule wins:
/// exact label, `Answer: L`, leading `L.` or `(l)`, unique option text
/// contained in the answer. Otherwise the trimmed text (at most 200 chars)
/// is returned with the fallback flag set. Open-ended answers pass through.
///
/// Rules run on the trimmed, truncated text, which keeps the function
/// idempotent.
pub fn normalize_answer(raw: &str, options: &[OptionChoice]) -> (String, bool) {
    let text = truncate_chars(raw.trim(), MAX_FALLBACK_CHARS).trim_end();
    if options.is_empty() {
        return (raw.trim().to_string(), false);
    }
    let label_ci = |s: &str| options.iter().find(|o| o.label.eq_ignore_ascii_case(s)).map(|o| o.label.clone());

    if let Some(l) = label_ci(text) {
        return (l, false);
    }
    if let Some(c) = answer_pattern().captures(text) {
        if let Some(l) = label_ci(&c[1]) {
            return (l, false);
        }
    }
    if let Some(c) = leading_pattern().captures(text) {
        let hit = match (c.get(1), c.get(2)) {
            (Some(exact), _) => options.iter().find(|o| o.label == exact.as_str()).map(|o| o.label.clone()),
            (None, Some(paren)) => label_ci(paren.as_str()),
            _ => None,
        };
        if let Some(l) = hit {
            return (l, false);
        }
    }
    let lower = text.to_lowercase();
    let contained: Vec<&OptionChoice> = options
        .iter()
        .filter(|o| !o.text.trim().is_empty() && lower.contains(&o.text.trim().to_lowercase()))
        .collect();
    if let [only] = contained.as_slice() {
        return (only.label.clone(), false);
    }
    (text.to_string(), true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcedAnswer {
    pub answer: FinalAnswer,
    /// Why the deterministic fallback was used, if it was.
    pub failure: Option<String>,
}

/// Everything the reasoner sees at one step.
pub struct ReasonerStepInput<'a> {
    pub task: &'a Task,
    pub sir: &'a Sir,
    pub memory: &'a ReasonerMemory,
    pub outer_iteration: u32,
    pub step_index: u32,
    pub history: &'a [ReasonerStepRecord],
}

#[derive(Debug, Clone)]
pub struct ReasonerAgent {
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub max_iters: u32,
    pub retry: RetryPolicy,
    offered_all: Vec<ToolSpec>,
    offered_force: Vec<ToolSpec>,
}

impl ReasonerAgent {
    pub fn new(config: &RunConfig, toolbox: &Toolbox) -> Self {
        Self {
            model: config.reasoner.model.clone(),
            max_output_tokens: config.response_token_limit,
            temperature: config.temperature,
            max_iters: config.max_iters,
            retry: config.retry,
            offered_all: toolbox.subset(&toolbox::REASONER_TOOLS),
            offered_force: toolbox.subset(&[toolbox::TERMINATE_AND_ANSWER]),
        }
    }

    pub fn offered_tools(&self) -> &[ToolSpec] {
        &self.offered_all
    }

    fn context_block(task: &Task, sir: &Sir, memory: &ReasonerMemory) -> String {
        let mut out = format!(
            "{}\n\nSIR FROM TRANSLATOR:\n{}",
            task.render_question(),
            sir.to_canonical_json()
        );
        if !memory.summaries.is_empty() {
            out.push_str(&format!("\n\nMEMORY OF EARLIER ITERATIONS:\n{}", memory.render()));
        }
        out
    }

    fn request(&self, purpose: CallPurpose, messages: Vec<Message>, tools: Vec<ToolSpec>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            role: AgentRole::Reasoner,
            purpose,
            messages,
            tools,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        }
    }

    pub fn build_request(&self, input: &ReasonerStepInput<'_>) -> ChatRequest {
        let mut first = format!(
            "{}\n\n{}",
            Self::context_block(input.task, input.sir, input.memory),
            prompts::REASONER_NEXT_STEP.trim_end()
        );
        if input.outer_iteration >= self.max_iters {
            first.push_str("\n\n");
            first.push_str(prompts::REASONER_LAST_ITERATION);
        }
        let mut messages = vec![Message::system(prompts::REASONER_SYSTEM.trim_end()), Message::user(first)];
        for rec in input.history {
            let args = match &rec.action {
                ReasonerAction::ToolCall { arguments, .. } => arguments.clone(),
                other => serde_json::to_value(other).unwrap_or_default(),
            };
            let name = match &rec.action {
                ReasonerAction::ToolCall { tool_name, .. } => tool_name.as_str(),
                ReasonerAction::TerminateAnswer { .. } => toolbox::TERMINATE_AND_ANSWER,
                ReasonerAction::TerminateFeedback { .. } => toolbox::TERMINATE_AND_ASK_TRANSLATOR,
            };
            messages.push(Message::assistant(format!("{}\n{}", rec.thought, action::describe_call(name, &args))));
            if let Some(result) = &rec.tool_result {
                messages.push(Message::user(format!("[tool result {}]\n{result}", rec.call_id)));
            }
        }
        if !input.history.is_empty() {
            messages.push(Message::user(prompts::REASONER_NEXT_STEP.trim_end()));
        }
        self.request(CallPurpose::ReasonerStep, messages, self.offered_all.clone())
    }

    pub fn build_force_request(&self, sir: &Sir, task: &Task, memory: &ReasonerMemory) -> ChatRequest {
        let user = format!(
            "{}\n\n{}",
            Self::context_block(task, sir, memory),
            prompts::FORCE_ANSWER.trim_end()
        );
        self.request(
            CallPurpose::ForceAnswer,
            vec![Message::system(prompts::REASONER_SYSTEM.trim_end()), Message::user(user)],
            self.offered_force.clone(),
        )
    }

    fn terminal_from(spec: &ToolSpec, arguments: &Value) -> Result<ReasonerAction, String> {
        let mut args = arguments.clone();
        if let Some(Value::String(c)) = args.get_mut("confidence") {
            *c = c.trim().to_lowercase();
        }
        spec.validate(&args).map_err(|e| format!("{}: {e}", spec.name))?;
        let field = |k: &str| args.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        if spec.name == toolbox::TERMINATE_AND_ANSWER {
            let answer = field("answer");
            if answer.trim().is_empty() {
                return Err("terminate_and_answer: empty answer".into());
            }
            Ok(ReasonerAction::TerminateAnswer {
                answer,
                confidence: field("confidence").parse()?,
                reasoning: field("reasoning"),
            })
        } else {
            let feedback = field("feedback");
            if feedback.trim().is_empty() {
                return Err("terminate_and_ask_translator: empty feedback".into());
            }
            Ok(ReasonerAction::TerminateFeedback { feedback })
        }
    }

    /// A terminal payload printed as bare JSON.
    fn terminal_from_text(offered: &[ToolSpec], text: &str) -> Option<ReasonerAction> {
        for candidate in balanced_objects(text) {
            let Ok(value) = serde_json::from_str::<Value>(candidate) else {
                continue;
            };
            let name = if value.get("answer").is_some() {
                toolbox::TERMINATE_AND_ANSWER
            } else if value.get("feedback").is_some() {
                toolbox::TERMINATE_AND_ASK_TRANSLATOR
            } else {
                continue;
            };
            if let Ok(spec) = action::offered(offered, name) {
                if let Ok(a) = Self::terminal_from(spec, &value) {
                    return Some(a);
                }
            }
        }
        None
    }

    pub fn parse_reply_with(offered: &[ToolSpec], resp: &ChatResponse) -> Result<(String, ReasonerAction), String> {
        let thought = action::thought(resp);
        match action::extract_call(resp)? {
            Some(RawCall { name, arguments }) => {
                let spec = action::offered(offered, &name)?;
                if toolbox::is_terminal(&spec.name) {
                    Ok((thought, Self::terminal_from(spec, &arguments)?))
                } else {
                    Ok((
                        thought,
                        ReasonerAction::ToolCall {
                            tool_name: spec.name.clone(),
                            arguments,
                        },
                    ))
                }
            }
            None => match Self::terminal_from_text(offered, &thought) {
                Some(a) => Ok((thought, a)),
                None => Err("reply has neither a tool call nor a parseable terminal payload".into()),
            },
        }
    }

    pub fn parse_reply(&self, resp: &ChatResponse) -> Result<(String, ReasonerAction), String> {
        Self::parse_reply_with(&self.offered_all, resp)
    }

    pub fn propose_action(
        &self,
        backend: &dyn ChatBackend,
        input: &ReasonerStepInput<'_>,
    ) -> Result<(String, ReasonerAction), AgentError> {
        let request = self.build_request(input);
        Ok(call_with_retries(backend, &request, &self.retry, |resp| self.parse_reply(resp))?)
    }

    /// One fresh call offering only `terminate_and_answer`. Total: after the
    /// retries, or on transport failure, the deterministic fallback is used.
    pub fn force_answer(&self, backend: &dyn ChatBackend, sir: &Sir, task: &Task, memory: &ReasonerMemory) -> ForcedAnswer {
        let request = self.build_force_request(sir, task, memory);
        let result = call_with_retries(backend, &request, &self.retry, |resp| {
            match Self::parse_reply_with(&self.offered_force, resp)? {
                (_, ReasonerAction::TerminateAnswer { answer, confidence, reasoning }) => {
                    Ok(FinalAnswer::from_terminate(&answer, confidence, &reasoning, &task.options))
                }
                _ => Err("expected terminate_and_answer".to_string()),
            }
        });
        match result {
            Ok(answer) => ForcedAnswer { answer, failure: None },
            Err(f) => {
                let reason = match f {
                    CallFailure::Transport(e) => e.to_string(),
                    CallFailure::Rejected(e) => e,
                };
                ForcedAnswer {
                    answer: FinalAnswer::deterministic_fallback(task, &format!("forced answer unavailable: {reason}")),
                    failure: Some(reason),
                }
            }
        }
    }
}
