//! Chat-completions JSON wire format.

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{BackendError, ChatRequest, ChatResponse, ContentPart, MessageRole, ToolCallRequest, Usage};

fn role_str(role: MessageRole) -> &'static str {
    match role {
        MessageRole::System => "system",
        MessageRole::User => "user",
        MessageRole::Assistant => "assistant",
    }
}

/// Request body. Images are sent inline as base64 data URLs.
pub fn request_body(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let content = if m.has_image() {
                Value::Array(
                    m.parts
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text(t) => json!({"type": "text", "text": t}),
                            ContentPart::Image(img) => json!({
                                "type": "image_url",
                                "image_url": {"url": format!(
                                    "data:{};base64,{}",
                                    img.media_type,
                                    base64::engine::general_purpose::STANDARD.encode(img.bytes.as_slice())
                                )}
                            }),
                        })
                        .collect(),
                )
            } else {
                Value::String(m.text())
            };
            json!({"role": role_str(m.role), "content": content})
        })
        .collect();
    let mut body = json!({
        "model": request.model,
        "messages": messages,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    });
    if !request.tools.is_empty() {
        body["tools"] = Value::Array(request.tools.iter().map(|t| t.to_wire()).collect());
    }
    body
}

/// Decodes a response body. Missing usage is estimated from character
/// counts and flagged approximate.
pub fn parse_response(
    request: &ChatRequest,
    body: &Value,
    latency: Duration,
) -> Result<ChatResponse, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Fatal("response has no choices[0].message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Array(parts)) => {
            let joined: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            Some(joined.join("\n"))
        }
        _ => None,
    }
    .filter(|t| !t.is_empty());

    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Fatal("tool call without function name".into()))?;
            let arguments = match call.pointer("/function/arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            let id = call
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCallRequest {
                id,
                name: name.to_string(),
                arguments,
            });
        }
    }

    if text.is_none() && tool_calls.is_empty() {
        return Err(BackendError::Fatal("response has neither text nor tool calls".into()));
    }

    let mut response = ChatResponse {
        text,
        tool_calls,
        usage: Usage::default(),
        latency,
    };
    let reported = body.get("usage").and_then(|u| {
        Some(Usage::new(
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    response.usage = reported
        .unwrap_or_else(|| Usage::approximate(request.text_chars(), response.output_chars()));
    Ok(response)
}

/// Rendering of a response for traces.
pub fn response_value(response: &ChatResponse) -> Value {
    json!({
        "text": response.text,
        "tool_calls": response.tool_calls,
        "usage": response.usage,
    })
}
