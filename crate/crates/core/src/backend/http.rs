use std::time::{Duration, Instant};

use crate::config::{EndpointConfig, RunConfig};

use super::{wire, AgentRole, BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Blocking client for chat-completions-compatible endpoints, one endpoint
/// per agent role. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    translator: EndpointConfig,
    reasoner: EndpointConfig,
}

impl HttpBackend {
    pub fn new(translator: EndpointConfig, reasoner: EndpointConfig, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("HTTP client construction");
        Self {
            client,
            translator,
            reasoner,
        }
    }

    pub fn from_config(config: &RunConfig) -> Self {
        Self::new(
            config.translator.clone(),
            config.reasoner.clone(),
            Duration::from_secs(180),
        )
    }

    fn endpoint(&self, role: AgentRole) -> &EndpointConfig {
        match role {
            AgentRole::Translator => &self.translator,
            AgentRole::Reasoner => &self.reasoner,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let endpoint = self.endpoint(request.role);
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(&wire::request_body(request));
        if let Ok(key) = std::env::var(&endpoint.api_key_env) {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                BackendError::Retryable(e.to_string())
            } else {
                BackendError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        let body_text = resp
            .text()
            .map_err(|e| BackendError::Retryable(format!("reading body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Retryable(format!("HTTP {status}: {body_text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}: {body_text}")));
        }
        let body: serde_json::Value = serde_json::from_str(&body_text)
            .map_err(|e| BackendError::Fatal(format!("malformed body: {e}")))?;
        wire::parse_response(request, &body, started.elapsed())
    }
}
