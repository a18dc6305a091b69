//! The structured intermediate representation (SIR) exchanged between the
//! translator and the reasoner.
//!
//! Reading is lenient: the document may be embedded in model prose and may
//! carry unknown keys, which are dropped. Writing is strict: the canonical
//! form has a fixed key order and never emits anything beyond the three
//! schema fields.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Translator confidence in the completeness of the caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SirConfidence {
    Low,
    Mid,
    High,
}

impl SirConfidence {
    pub const ALL: [SirConfidence; 3] = [SirConfidence::Low, SirConfidence::Mid, SirConfidence::High];

    pub fn as_str(self) -> &'static str {
        match self {
            SirConfidence::Low => "low",
            SirConfidence::Mid => "mid",
            SirConfidence::High => "high",
        }
    }
}

impl fmt::Display for SirConfidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SirConfidence {
    type Err = SirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(SirConfidence::Low),
            "mid" => Ok(SirConfidence::Mid),
            "high" => Ok(SirConfidence::High),
            other => Err(SirError::BadEnum(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SirError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    WrongType(&'static str),
    #[error("confidence `{0}` is not one of low, mid, high")]
    BadEnum(String),
    #[error("no balanced JSON object found")]
    Unparseable,
    #[error("feedback must be non-empty")]
    EmptyFeedback,
}

/// Field order here is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sir {
    pub global_caption: String,
    pub confidence: SirConfidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

impl Sir {
    pub fn new(global_caption: impl Into<String>, confidence: SirConfidence) -> Self {
        Self {
            global_caption: global_caption.into(),
            confidence,
            feedback: None,
        }
    }

    /// The null SIR an episode starts from.
    pub fn initial() -> Self {
        Self::new("", SirConfidence::Low)
    }

    pub fn is_initial(&self) -> bool {
        self.global_caption.is_empty() && self.feedback.is_none()
    }

    /// Extracts and validates a SIR from raw model output.
    ///
    /// Every outermost balanced `{...}` in `raw` is tried in order and the
    /// first one that validates wins. If none validates, the error of the
    /// first candidate that was at least well-formed JSON is returned.
    pub fn parse(raw: &str) -> Result<Sir, SirError> {
        let mut first_err = None;
        for candidate in balanced_objects(raw) {
            let value: Value = match serde_json::from_str(candidate) {
                Ok(v) => v,
                Err(_) => continue,
            };
            match Self::from_value(&value) {
                Ok(sir) => return Ok(sir),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        Err(first_err.unwrap_or(SirError::Unparseable))
    }

    /// Validates an already-decoded JSON value. Unknown keys are ignored.
    pub fn from_value(value: &Value) -> Result<Sir, SirError> {
        let obj = value.as_object().ok_or(SirError::Unparseable)?;
        let caption = match obj.get("global_caption") {
            None | Some(Value::Null) => return Err(SirError::MissingField("global_caption")),
            Some(Value::String(s)) if s.is_empty() => {
                return Err(SirError::MissingField("global_caption"))
            }
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(SirError::WrongType("global_caption")),
        };
        let confidence = match obj.get("confidence") {
            None | Some(Value::Null) => return Err(SirError::MissingField("confidence")),
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(SirError::BadEnum(other.to_string())),
        };
        let feedback = match obj.get("feedback") {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(Value::String(_)) | Some(Value::Null) | None => None,
            Some(_) => return Err(SirError::WrongType("feedback")),
        };
        Ok(Sir {
            global_caption: caption,
            confidence,
            feedback,
        })
    }

    /// Deterministic bytes: keys in (global_caption, confidence, feedback)
    /// order, feedback omitted when absent.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("SIR serialization is infallible")
    }

    /// Attaches reasoner feedback, replacing any earlier feedback.
    pub fn merge_feedback(&self, feedback: &str) -> Result<Sir, SirError> {
        if feedback.trim().is_empty() {
            return Err(SirError::EmptyFeedback);
        }
        Ok(Sir {
            global_caption: self.global_caption.clone(),
            confidence: self.confidence,
            feedback: Some(feedback.to_string()),
        })
    }
}

impl fmt::Display for Sir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_json())
    }
}

/// Returns every outermost balanced `{...}` span of `text`, in order.
///
/// Braces inside JSON string literals are skipped so captions such as
/// `"a {b} c"` do not confuse the scanner.
pub fn balanced_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotOrigin {
    Initial,
    Refined,
    FeedbackMerged,
}

/// Position of a snapshot within an episode; ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepLabel {
    pub outer_iteration: u32,
    pub inner_step: u32,
}

impl StepLabel {
    pub fn new(outer_iteration: u32, inner_step: u32) -> Self {
        Self {
            outer_iteration,
            inner_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirSnapshot {
    pub sir: Sir,
    pub label: StepLabel,
    pub origin: SnapshotOrigin,
}
