//! Translator policy: prompt assembly, action proposal, SIR refinement and
//! sufficiency scoring.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::{self, RawCall};
use crate::backend::{
    call_with_retries, AgentRole, BackendError, CallFailure, CallPurpose, ChatBackend, ChatRequest, ChatResponse,
    Message,
};
use crate::config::{RetryPolicy, RunConfig};
use crate::prompts;
use crate::sir::{Sir, SirConfidence};
use crate::task::Task;
use crate::toolbox::{self, ToolSpec, Toolbox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranslatorAction {
    ToolCall { tool_name: String, arguments: Value },
    TerminateSir { sir: Sir },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorStepRecord {
    pub step: u32,
    pub call_id: String,
    pub thought: String,
    pub action: TranslatorAction,
    /// Present iff the action was a tool call.
    pub tool_result: Option<String>,
    pub sir_after: Sir,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("unusable reply after retries: {0}")]
    ActionParseFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<CallFailure<String>> for AgentError {
    fn from(f: CallFailure<String>) -> Self {
        match f {
            CallFailure::Transport(e) => AgentError::Backend(e),
            CallFailure::Rejected(msg) => AgentError::ActionParseFailure(msg),
        }
    }
}

/// Everything the translator sees at one step.
pub struct TranslatorStepInput<'a> {
    pub task: &'a Task,
    pub sir_current: &'a Sir,
    pub outer_iteration: u32,
    pub step_index: u32,
    pub history: &'a [TranslatorStepRecord],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub sir: Sir,
    /// False when no backend call was needed (empty observation).
    pub called: bool,
    /// Why the reply could not be used, if it could not.
    pub failure: Option<String>,
}

/// Numeric score for a categorical SIR confidence.
pub fn confidence_score(level: SirConfidence) -> f64 {
    match level {
        SirConfidence::Low => 0.3,
        SirConfidence::Mid => 0.6,
        SirConfidence::High => 0.9,
    }
}

pub fn assess_sufficiency(sir: &Sir) -> (f64, SirConfidence) {
    (confidence_score(sir.confidence), sir.confidence)
}

/// Stateless apart from settings; one instance can serve many episodes.
#[derive(Debug, Clone)]
pub struct TranslatorAgent {
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub max_steps: u32,
    pub retry: RetryPolicy,
    offered_all: Vec<ToolSpec>,
    offered_final: Vec<ToolSpec>,
}

impl TranslatorAgent {
    pub fn new(config: &RunConfig, toolbox: &Toolbox) -> Self {
        Self {
            model: config.translator.model.clone(),
            max_output_tokens: config.response_token_limit,
            temperature: config.temperature,
            max_steps: config.max_steps_translator,
            retry: config.retry,
            offered_all: toolbox.subset(&toolbox::TRANSLATOR_TOOLS),
            offered_final: toolbox.subset(&[toolbox::TERMINATE_AND_OUTPUT_CAPTION]),
        }
    }

    /// Tools offered at `step_index`; only the caption terminator at the cap.
    pub fn offered_tools(&self, step_index: u32) -> &[ToolSpec] {
        if step_index >= self.max_steps {
            &self.offered_final
        } else {
            &self.offered_all
        }
    }

    fn opening_block(&self, input: &TranslatorStepInput<'_>) -> String {
        let question = input.task.render_question();
        match &input.sir_current.feedback {
            Some(_) => {
                let prev = input.outer_iteration.saturating_sub(1).to_string();
                let sir = input.sir_current.to_canonical_json();
                let block = prompts::render(
                    prompts::TRANSLATOR_FEEDBACK,
                    &[("iteration-1", &prev), ("current_sir", &sir), ("question", &input.task.question)],
                );
                format!("{question}\n\n{block}\n\n{}", prompts::SIR_MANAGEMENT.trim_end())
            }
            None if input.sir_current.is_initial() => {
                format!("{question}\n\n{}", prompts::TRANSLATOR_FIRST_STEP.trim_end())
            }
            None => format!(
                "{question}\n\nCURRENT SIR:\n{}\n\n{}",
                input.sir_current.to_canonical_json(),
                prompts::SIR_MANAGEMENT.trim_end()
            ),
        }
    }

    pub fn build_request(&self, input: &TranslatorStepInput<'_>) -> ChatRequest {
        let mut messages = vec![
            Message::system(prompts::TRANSLATOR_SYSTEM.trim_end()),
            Message::user_with_image(input.task.image.clone(), self.opening_block(input)),
        ];
        for rec in input.history {
            let (name, args) = match &rec.action {
                TranslatorAction::ToolCall { tool_name, arguments } => (tool_name.as_str(), arguments.clone()),
                TranslatorAction::TerminateSir { sir } => (
                    toolbox::TERMINATE_AND_OUTPUT_CAPTION,
                    serde_json::to_value(sir).unwrap_or_default(),
                ),
            };
            messages.push(Message::assistant(format!(
                "{}\n{}",
                rec.thought,
                action::describe_call(name, &args)
            )));
            if let Some(result) = &rec.tool_result {
                messages.push(Message::user(format!("[tool result {}]\n{result}", rec.call_id)));
            }
        }
        let at_cap = input.step_index >= self.max_steps;
        if input.step_index > 1 || at_cap {
            let block = if at_cap {
                prompts::TRANSLATOR_FINAL_STEP
            } else {
                prompts::TRANSLATOR_NEXT_STEP
            };
            messages.push(Message::user(format!(
                "CURRENT SIR:\n{}\n\n{}",
                input.sir_current.to_canonical_json(),
                block.trim_end()
            )));
        }
        ChatRequest {
            model: self.model.clone(),
            role: AgentRole::Translator,
            purpose: CallPurpose::TranslatorStep,
            messages,
            tools: self.offered_tools(input.step_index).to_vec(),
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        }
    }

    /// Interprets one reply. Non-terminal calls with bad arguments are let
    /// through; the toolbox reports the schema violation as a tool result.
    pub fn parse_reply(&self, resp: &ChatResponse, step_index: u32) -> Result<(String, TranslatorAction), String> {
        let thought = action::thought(resp);
        let offered = self.offered_tools(step_index);
        match action::extract_call(resp)? {
            Some(RawCall { name, arguments }) => {
                let spec = action::offered(offered, &name)?;
                if spec.name == toolbox::TERMINATE_AND_OUTPUT_CAPTION {
                    spec.validate(&arguments).map_err(|e| format!("{}: {e}", spec.name))?;
                    let sir = Sir::from_value(&arguments).map_err(|e| format!("{}: {e}", spec.name))?;
                    Ok((thought, TranslatorAction::TerminateSir { sir }))
                } else {
                    Ok((
                        thought,
                        TranslatorAction::ToolCall {
                            tool_name: spec.name.clone(),
                            arguments,
                        },
                    ))
                }
            }
            None => match Sir::parse(&thought) {
                Ok(sir) => Ok((thought, TranslatorAction::TerminateSir { sir })),
                Err(_) => Err("reply has neither a tool call nor a parseable terminate payload".into()),
            },
        }
    }

    pub fn propose_action(
        &self,
        backend: &dyn ChatBackend,
        input: &TranslatorStepInput<'_>,
    ) -> Result<(String, TranslatorAction), AgentError> {
        let request = self.build_request(input);
        Ok(call_with_retries(backend, &request, &self.retry, |resp| {
            self.parse_reply(resp, input.step_index)
        })?)
    }

    pub fn build_refine_request(&self, sir_prev: &Sir, thought: &str, tool_result: &str) -> ChatRequest {
        let body = prompts::render(
            prompts::REFINE_SIR,
            &[
                ("current_sir", &sir_prev.to_canonical_json()),
                ("thought", thought),
                ("tool_result", tool_result),
            ],
        );
        ChatRequest {
            model: self.model.clone(),
            role: AgentRole::Translator,
            purpose: CallPurpose::RefineSir,
            messages: vec![Message::user(format!("{body}\n\n{}", prompts::SIR_MANAGEMENT.trim_end()))],
            tools: Vec::new(),
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        }
    }

    /// Folds an observation into the SIR. Never fails: an unusable reply
    /// yields `sir_prev` at low confidence. Feedback is carried over.
    pub fn refine_sir(&self, backend: &dyn ChatBackend, sir_prev: &Sir, thought: &str, tool_result: &str) -> RefineOutcome {
        if tool_result.trim().is_empty() {
            return RefineOutcome {
                sir: sir_prev.clone(),
                called: false,
                failure: None,
            };
        }
        let request = self.build_refine_request(sir_prev, thought, tool_result);
        let parsed = call_with_retries(backend, &request, &self.retry, |resp| {
            Sir::parse(resp.text.as_deref().unwrap_or_default()).map_err(|e| e.to_string())
        });
        match parsed {
            Ok(mut sir) => {
                sir.feedback = sir_prev.feedback.clone();
                RefineOutcome {
                    sir,
                    called: true,
                    failure: None,
                }
            }
            Err(f) => {
                let reason = match f {
                    CallFailure::Transport(e) => e.to_string(),
                    CallFailure::Rejected(e) => e,
                };
                let mut sir = sir_prev.clone();
                sir.confidence = SirConfidence::Low;
                RefineOutcome {
                    sir,
                    called: true,
                    failure: Some(reason),
                }
            }
        }
    }
}
