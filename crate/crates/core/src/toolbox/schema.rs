//! Tool declarations and argument validation against their object schemas.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// Object schema: `type`, `properties`, `required`.
    pub parameters: Value,
}

impl ToolSpec {
    /// Fails if a required property is missing from the property map.
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        parameters: Value,
    ) -> Result<Self, String> {
        let spec = Self {
            name: name.into(),
            description: description.into(),
            parameters,
        };
        let props = spec.parameters.get("properties").and_then(Value::as_object);
        for req in spec.required() {
            if !props.is_some_and(|p| p.contains_key(req)) {
                return Err(format!("tool `{}`: required `{req}` is not a declared property", spec.name));
            }
        }
        Ok(spec)
    }

    pub fn required(&self) -> Vec<&str> {
        self.parameters
            .get("required")
            .and_then(Value::as_array)
            .map(|r| r.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default()
    }

    /// Function-calling wire form.
    pub fn to_wire(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }

    /// Checks `args` against the schema: object-ness, required presence,
    /// declared property types and enums. Undeclared properties are allowed.
    pub fn validate(&self, args: &Value) -> Result<(), ArgumentError> {
        let obj = args.as_object().ok_or(ArgumentError::NotAnObject)?;
        let missing: Vec<String> = self
            .required()
            .into_iter()
            .filter(|r| obj.get(*r).is_none_or(Value::is_null))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(ArgumentError::Missing(missing));
        }
        let Some(props) = self.parameters.get("properties").and_then(Value::as_object) else {
            return Ok(());
        };
        for (key, prop) in props {
            let Some(value) = obj.get(key) else { continue };
            if value.is_null() {
                continue;
            }
            if let Some(expected) = prop.get("type").and_then(Value::as_str) {
                if !type_matches(value, expected) {
                    return Err(ArgumentError::WrongType {
                        property: key.clone(),
                        expected: expected.to_string(),
                    });
                }
            }
            if let Some(allowed) = prop.get("enum").and_then(Value::as_array) {
                if !allowed.contains(value) {
                    return Err(ArgumentError::NotInEnum {
                        property: key.clone(),
                        value: value.to_string(),
                        allowed: allowed.iter().map(|a| a.to_string()).collect(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn type_matches(value: &Value, expected: &str) -> bool {
    match expected {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgumentError {
    NotAnObject,
    Missing(Vec<String>),
    WrongType { property: String, expected: String },
    NotInEnum { property: String, value: String, allowed: Vec<String> },
}

impl ArgumentError {
    /// Properties the error names.
    pub fn properties(&self) -> Vec<&str> {
        match self {
            ArgumentError::NotAnObject => vec![],
            ArgumentError::Missing(m) => m.iter().map(String::as_str).collect(),
            ArgumentError::WrongType { property, .. } | ArgumentError::NotInEnum { property, .. } => {
                vec![property.as_str()]
            }
        }
    }
}

impl fmt::Display for ArgumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgumentError::NotAnObject => f.write_str("arguments must be a JSON object"),
            ArgumentError::Missing(m) => write!(f, "missing: {}", m.join(", ")),
            ArgumentError::WrongType { property, expected } => {
                write!(f, "property `{property}`: expected {expected}")
            }
            ArgumentError::NotInEnum { property, value, allowed } => {
                write!(f, "property `{property}`: {value} not in [{}]", allowed.join(", "))
            }
        }
    }
}

impl std::error::Error for ArgumentError {}
