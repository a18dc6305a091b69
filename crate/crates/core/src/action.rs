//! Pulling a tool call out of a model reply.
//!
//! Native tool calls win. Models served without a tool parser often print
//! the call as JSON text instead (`{"name": ..., "arguments": {...}}`,
//! sometimes inside `<tool_call>` tags); those are accepted too.

use serde_json::{Map, Value};

use crate::backend::ChatResponse;
use crate::sir::balanced_objects;
use crate::toolbox::ToolSpec;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawCall {
    pub name: String,
    pub arguments: Value,
}

fn decode_arguments(raw: &str) -> Result<Value, String> {
    if raw.trim().is_empty() {
        return Ok(Value::Object(Map::new()));
    }
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(other) => Err(format!("tool arguments are not an object: {other}")),
        Err(e) => Err(format!("tool arguments are not valid JSON: {e}")),
    }
}

fn call_from_text(text: &str) -> Result<Option<RawCall>, String> {
    for candidate in balanced_objects(text) {
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(candidate) else {
            continue;
        };
        let Some(Value::String(name)) = obj.get("name") else {
            continue;
        };
        let arguments = match obj.get("arguments").or_else(|| obj.get("parameters")) {
            None | Some(Value::Null) => Value::Object(Map::new()),
            Some(v @ Value::Object(_)) => v.clone(),
            Some(Value::String(s)) => decode_arguments(s)?,
            Some(other) => return Err(format!("tool arguments are not an object: {other}")),
        };
        return Ok(Some(RawCall {
            name: name.clone(),
            arguments,
        }));
    }
    Ok(None)
}

/// The first tool call in `resp`, if any. Undecodable arguments are an error.
pub(crate) fn extract_call(resp: &ChatResponse) -> Result<Option<RawCall>, String> {
    if let Some(call) = resp.tool_calls.first() {
        return Ok(Some(RawCall {
            name: call.name.clone(),
            arguments: decode_arguments(&call.arguments)?,
        }));
    }
    match resp.text.as_deref() {
        Some(text) => call_from_text(text),
        None => Ok(None),
    }
}

pub(crate) fn thought(resp: &ChatResponse) -> String {
    resp.text.as_deref().unwrap_or_default().trim().to_string()
}

pub(crate) fn offered<'a>(offered: &'a [ToolSpec], name: &str) -> Result<&'a ToolSpec, String> {
    offered
        .iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| format!("tool `{name}` was not offered at this step"))
}

/// One line describing an action for the conversation history.
pub(crate) fn describe_call(name: &str, arguments: &Value) -> String {
    format!("[action] {name} {arguments}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn native_call_wins() {
        let mut r = ChatResponse::tool_call(Some(r#"{"name":"x","arguments":{}}"#), "ocr", json!({}));
        assert_eq!(extract_call(&r).unwrap().unwrap().name, "ocr");
        r.tool_calls[0].arguments = String::new();
        assert_eq!(extract_call(&r).unwrap().unwrap().arguments, json!({}));
        r.tool_calls[0].arguments = "[1]".into();
        assert!(extract_call(&r).is_err());
        r.tool_calls[0].arguments = "{bad".into();
        assert!(extract_call(&r).is_err());
    }

    #[test]
    fn text_calls() {
        let r = ChatResponse::from_text(
            "Let me look.\n<tool_call>\n{\"name\": \"smart_grid_caption\", \"arguments\": {\"query\": \"poster\"}}\n</tool_call>",
        );
        let call = extract_call(&r).unwrap().unwrap();
        assert_eq!(call.name, "smart_grid_caption");
        assert_eq!(call.arguments, json!({"query": "poster"}));

        let r = ChatResponse::from_text(r#"{"name": "python_execute", "arguments": "{\"code\": \"print(1)\"}"}"#);
        assert_eq!(extract_call(&r).unwrap().unwrap().arguments, json!({"code": "print(1)"}));

        let r = ChatResponse::from_text(r#"{"global_caption": "a", "confidence": "low"}"#);
        assert_eq!(extract_call(&r).unwrap(), None);
        assert_eq!(extract_call(&ChatResponse::from_text("plain prose")).unwrap(), None);
    }
}
