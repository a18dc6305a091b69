//! Chat-completions transport: request/response types, the [`ChatBackend`]
//! trait, a bounded retry helper, and two implementations (HTTP and
//! scripted).

mod http;
mod scripted;
pub mod wire;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::RetryPolicy;
use crate::task::ImageInput;
use crate::toolbox::ToolSpec;

pub use http::HttpBackend;
pub use scripted::{ScriptMatch, ScriptedBackend, ScriptedReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Translator,
    Reasoner,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Translator => "translator",
            AgentRole::Reasoner => "reasoner",
        })
    }
}

/// Why a backend call was made. Only the policy purposes count against the
/// per-episode call budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    TranslatorStep,
    RefineSir,
    RegionSelect,
    RegionCaption,
    Ocr,
    ReadTable,
    ReasonerStep,
    ForceAnswer,
}

impl CallPurpose {
    pub fn is_policy(self) -> bool {
        matches!(
            self,
            CallPurpose::TranslatorStep | CallPurpose::ReasonerStep | CallPurpose::ForceAnswer
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image(ImageInput),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: MessageRole,
    pub parts: Vec<ContentPart>,
}

impl Message {
    pub fn new(role: MessageRole, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(MessageRole::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(MessageRole::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(MessageRole::Assistant, text)
    }

    pub fn user_with_image(image: ImageInput, text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            parts: vec![ContentPart::Image(image), ContentPart::Text(text.into())],
        }
    }

    pub fn has_image(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, ContentPart::Image(_)))
    }

    /// Text parts joined by newlines; images are skipped.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub role: AgentRole,
    pub purpose: CallPurpose,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolSpec>,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn has_image(&self) -> bool {
        self.messages.iter().any(Message::has_image)
    }

    /// Checked before anything is transmitted.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::Fatal("request has no messages".into()));
        }
        if self.role == AgentRole::Reasoner && self.has_image() {
            return Err(BackendError::ImageToReasoner);
        }
        Ok(())
    }

    pub fn text_chars(&self) -> usize {
        self.messages.iter().map(|m| m.text().chars().count()).sum()
    }

    pub fn contains_text(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| {
            m.parts.iter().any(|p| match p {
                ContentPart::Text(t) => t.contains(needle),
                ContentPart::Image(_) => false,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    /// Raw argument text as sent by the model; may be malformed.
    pub arguments: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Set when the endpoint did not report usage and counts were estimated.
    pub approximate: bool,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
            approximate: false,
        }
    }

    /// `ceil(chars / 4)` per direction.
    pub fn approximate(input_chars: usize, output_chars: usize) -> Self {
        Self {
            input_tokens: input_chars.div_ceil(4) as u64,
            output_tokens: output_chars.div_ceil(4) as u64,
            approximate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCallRequest>,
    pub usage: Usage,
    pub latency: Duration,
}

impl ChatResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            tool_calls: Vec::new(),
            usage: Usage::default(),
            latency: Duration::ZERO,
        }
    }

    /// A reply consisting of an optional thought and a single tool call.
    pub fn tool_call(thought: Option<&str>, name: &str, arguments: serde_json::Value) -> Self {
        Self {
            text: thought.map(str::to_string),
            tool_calls: vec![ToolCallRequest {
                id: "call_0".into(),
                name: name.into(),
                arguments: arguments.to_string(),
            }],
            usage: Usage::default(),
            latency: Duration::ZERO,
        }
    }

    /// A tool call whose argument text is passed through untouched.
    pub fn raw_tool_call(thought: Option<&str>, name: &str, arguments: &str) -> Self {
        let mut r = Self::tool_call(thought, name, serde_json::Value::Null);
        r.tool_calls[0].arguments = arguments.to_string();
        r
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Usage::new(input_tokens, output_tokens);
        self
    }

    pub fn output_chars(&self) -> usize {
        self.text.as_deref().map_or(0, |t| t.chars().count())
            + self
                .tool_calls
                .iter()
                .map(|c| c.name.chars().count() + c.arguments.chars().count())
                .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Timeouts, 429 and 5xx.
    #[error("retryable transport error: {0}")]
    Retryable(String),
    /// Other 4xx, malformed bodies, misconfiguration.
    #[error("fatal backend error: {0}")]
    Fatal(String),
    /// Scripted backend had no canned reply for the request.
    #[error("no scripted reply matches request:\n{0}")]
    NoMatch(String),
    #[error("refusing to send image content to the reasoner")]
    ImageToReasoner,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Retryable(_))
    }
}

pub trait ChatBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat_complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat_complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat_complete(request)
    }
}

/// Outcome of a call that exhausted its attempts.
#[derive(Debug, Clone, PartialEq)]
pub enum CallFailure<E> {
    Transport(BackendError),
    Rejected(E),
}

/// Issues `request` until `accept` takes the response, at most
/// `policy.max_attempts()` times. Retryable transport errors back off
/// exponentially; rejected responses are retried immediately; fatal errors
/// end the call at once.
pub fn call_with_retries<T, E>(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    policy: &RetryPolicy,
    mut accept: impl FnMut(&ChatResponse) -> Result<T, E>,
) -> Result<T, CallFailure<E>> {
    let mut last = None;
    let mut transport_failures = 0;
    for _ in 0..policy.max_attempts() {
        match backend.chat_complete(request) {
            Ok(resp) => match accept(&resp) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(CallFailure::Rejected(e)),
            },
            Err(e) if e.is_retryable() => {
                transport_failures += 1;
                last = Some(CallFailure::Transport(e));
                let wait = policy.backoff(transport_failures);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            Err(e) => return Err(CallFailure::Transport(e)),
        }
    }
    Err(last.expect("at least one attempt is always made"))
}
