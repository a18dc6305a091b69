//! Deterministic canned-response backend used as the test substrate.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{wire, BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Predicate over a request: optional exact model name and optional
/// substring that must occur in some text part of some message.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptMatch {
    pub model: Option<String>,
    pub contains: Option<String>,
}

impl ScriptMatch {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn model(model: impl Into<String>) -> Self {
        Self {
            model: Some(model.into()),
            contains: None,
        }
    }

    pub fn contains(needle: impl Into<String>) -> Self {
        Self {
            model: None,
            contains: Some(needle.into()),
        }
    }

    pub fn and_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        self.model.as_deref().is_none_or(|m| m == request.model)
            && self
                .contains
                .as_deref()
                .is_none_or(|needle| request.contains_text(needle))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedReply {
    Response(ChatResponse),
    Error(BackendError),
}

/// FIFO queue of canned replies, each guarded by a [`ScriptMatch`]. A request
/// consumes the first entry whose predicate matches; entries are used at
/// most once. One instance serves one episode.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<(ScriptMatch, ScriptedReply)>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, when: ScriptMatch, response: ChatResponse) {
        self.push_reply(when, ScriptedReply::Response(response));
    }

    pub fn push_error(&self, when: ScriptMatch, error: BackendError) {
        self.push_reply(when, ScriptedReply::Error(error));
    }

    pub fn push_reply(&self, when: ScriptMatch, reply: ScriptedReply) {
        self.queue.lock().unwrap().push_back((when, reply));
    }

    /// Builder form of [`push`](Self::push).
    pub fn with(self, when: ScriptMatch, response: ChatResponse) -> Self {
        self.push(when, response);
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn scripted_next(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut queue = self.queue.lock().unwrap();
        let idx = queue
            .iter()
            .position(|(when, _)| when.matches(request))
            .ok_or_else(|| BackendError::NoMatch(render(request)))?;
        match queue.remove(idx).expect("index from position").1 {
            ScriptedReply::Response(r) => Ok(r),
            ScriptedReply::Error(e) => Err(e),
        }
    }
}

fn render(request: &ChatRequest) -> String {
    let mut body = wire::request_body(request);
    // base64 payloads make the rendering unreadable
    if let Some(msgs) = body.get_mut("messages").and_then(|m| m.as_array_mut()) {
        for m in msgs {
            if let Some(parts) = m.get_mut("content").and_then(|c| c.as_array_mut()) {
                parts.retain(|p| p.get("type").and_then(|t| t.as_str()) == Some("text"));
            }
        }
    }
    serde_json::to_string_pretty(&body).unwrap_or_default()
}

impl ChatBackend for ScriptedBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.scripted_next(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AgentRole, CallPurpose, Message};

    fn req(model: &str, text: &str) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            role: AgentRole::Translator,
            purpose: CallPurpose::TranslatorStep,
            messages: vec![Message::system(text)],
            tools: vec![],
            max_output_tokens: 16,
            temperature: 0.0,
        }
    }

    #[test]
    fn first_matching_entry_is_consumed() {
        let b = ScriptedBackend::new()
            .with(ScriptMatch::contains("Visual-Only"), ChatResponse::from_text("r1"))
            .with(ScriptMatch::any(), ChatResponse::from_text("r2"));
        let r = b.scripted_next(&req("t", "You are \"Visual-Only Captioner\"")).unwrap();
        assert_eq!(r.text.as_deref(), Some("r1"));
        assert_eq!(b.remaining(), 1);
    }

    #[test]
    fn predicate_skips_non_matching_entries() {
        let b = ScriptedBackend::new()
            .with(ScriptMatch::model("reasoner"), ChatResponse::from_text("r"))
            .with(ScriptMatch::model("translator"), ChatResponse::from_text("t"));
        let r = b.scripted_next(&req("translator", "x")).unwrap();
        assert_eq!(r.text.as_deref(), Some("t"));
        assert_eq!(b.remaining(), 1);
    }

    #[test]
    fn empty_queue_is_no_match() {
        let b = ScriptedBackend::new();
        let err = b.scripted_next(&req("t", "hello there")).unwrap_err();
        match err {
            BackendError::NoMatch(rendered) => assert!(rendered.contains("hello there")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separate_instances_do_not_interfere() {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                std::thread::spawn(move || {
                    let b = ScriptedBackend::new();
                    for j in 0..50 {
                        b.push(ScriptMatch::any(), ChatResponse::from_text(format!("{i}-{j}")));
                    }
                    (0..50)
                        .map(|_| b.chat_complete(&req("m", "x")).unwrap().text.unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for (i, h) in handles.into_iter().enumerate() {
            let got = h.join().unwrap();
            let want: Vec<String> = (0..50).map(|j| format!("{i}-{j}")).collect();
            assert_eq!(got, want);
        }
    }
}
