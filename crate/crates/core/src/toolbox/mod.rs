//! Tool registry and dispatch.
//!
//! The registry holds every tool either agent can be offered, including the
//! three terminal tools. Terminal tools are intercepted by the engine as
//! control flow; [`Toolbox::execute`] only validates them.

pub mod grid;
pub mod python;
mod schema;
pub mod visual;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::ChatBackend;
use crate::prompts;
use crate::task::ImageInput;

pub use grid::{grid_partition, GridRegion, PixelRect, TooSmall};
pub use python::{ExecRequest, ExecResult, ExecStatus, FixedOutputRunner, NoSandbox, PythonRunner, SubprocessRunner};
pub use schema::{ArgumentError, ToolSpec};
pub use visual::{TextExtractor, VisionExtractor};

pub const OCR: &str = "ocr";
pub const READ_TABLE: &str = "read_table";
pub const SMART_GRID_CAPTION: &str = "smart_grid_caption";
pub const TERMINATE_AND_OUTPUT_CAPTION: &str = "terminate_and_output_caption";
pub const PYTHON_EXECUTE: &str = "python_execute";
pub const TERMINATE_AND_ANSWER: &str = "terminate_and_answer";
pub const TERMINATE_AND_ASK_TRANSLATOR: &str = "terminate_and_ask_translator";

pub const TRANSLATOR_TOOLS: [&str; 4] = [OCR, READ_TABLE, SMART_GRID_CAPTION, TERMINATE_AND_OUTPUT_CAPTION];
pub const REASONER_TOOLS: [&str; 3] = [PYTHON_EXECUTE, TERMINATE_AND_ANSWER, TERMINATE_AND_ASK_TRANSLATOR];

pub fn is_terminal(name: &str) -> bool {
    matches!(
        name,
        TERMINATE_AND_OUTPUT_CAPTION | TERMINATE_AND_ANSWER | TERMINATE_AND_ASK_TRANSLATOR
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub kind: String,
    /// PNG bytes.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub ok: bool,
    pub content: String,
    pub artifacts: Vec<Artifact>,
}

impl ToolResult {
    pub fn ok(content: impl Into<String>) -> Self {
        Self {
            ok: true,
            content: content.into(),
            artifacts: Vec::new(),
        }
    }

    /// Content is always prefixed `ERROR: `.
    pub fn error(reason: impl AsRef<str>) -> Self {
        Self {
            ok: false,
            content: format!("ERROR: {}", reason.as_ref()),
            artifacts: Vec::new(),
        }
    }
}

/// Model settings for the vision calls tools make on the translator's
/// behalf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionSettings {
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

pub struct ToolContext<'a> {
    pub image: Option<&'a ImageInput>,
    pub backend: &'a dyn ChatBackend,
    pub vision: &'a VisionSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("prompt templates mention unregistered tools: {0:?}")]
pub struct RegistryClosure(pub Vec<String>);

/// Immutable after construction; share freely across episodes.
pub struct Toolbox {
    specs: Vec<ToolSpec>,
    extractor: Arc<dyn TextExtractor>,
    python: Arc<dyn PythonRunner>,
}

impl Toolbox {
    /// Fails if a prompt template names a tool the registry lacks.
    pub fn new(
        extractor: Arc<dyn TextExtractor>,
        python: Arc<dyn PythonRunner>,
    ) -> Result<Self, RegistryClosure> {
        let tb = Self {
            specs: catalog(),
            extractor,
            python,
        };
        tb.check_closure()?;
        Ok(tb)
    }

    /// Vision-backed OCR/table tools and the given python runner.
    pub fn with_runner(python: Arc<dyn PythonRunner>) -> Self {
        Self::new(Arc::new(VisionExtractor), python).expect("built-in templates are closed")
    }

    pub fn check_closure(&self) -> Result<(), RegistryClosure> {
        let missing: Vec<String> = prompts::mentioned_tool_names()
            .into_iter()
            .filter(|n| self.spec(n).is_none())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(RegistryClosure(missing))
        }
    }

    /// Case-insensitive lookup (prompts say `OCR`, the registry says `ocr`).
    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn subset(&self, names: &[&str]) -> Vec<ToolSpec> {
        names.iter().filter_map(|n| self.spec(n).cloned()).collect()
    }

    pub fn execute(&self, name: &str, arguments: &Value, ctx: &ToolContext<'_>) -> ToolResult {
        let Some(spec) = self.spec(name) else {
            return ToolResult::error(format!("unknown tool `{name}`"));
        };
        if let Err(e) = spec.validate(arguments) {
            return ToolResult::error(format!("schema violation in `{}`: {e}", spec.name));
        }
        let need_image = || ctx.image.ok_or_else(|| ToolResult::error("no image available"));
        match spec.name.as_str() {
            OCR => match need_image() {
                Ok(img) => visual::ocr(self.extractor.as_ref(), img, ctx),
                Err(e) => e,
            },
            READ_TABLE => match need_image() {
                Ok(img) => visual::read_table(self.extractor.as_ref(), img, ctx),
                Err(e) => e,
            },
            SMART_GRID_CAPTION => match need_image() {
                Ok(img) => {
                    let query = arguments.get("query").and_then(Value::as_str).unwrap_or_default();
                    visual::smart_grid_caption(img, query, ctx)
                }
                Err(e) => e,
            },
            PYTHON_EXECUTE => {
                let code = arguments.get("code").and_then(Value::as_str).unwrap_or_default();
                python_result(self.python.run(&ExecRequest::new(code)))
            }
            other => ToolResult::error(format!("`{other}` is a terminal action handled by the engine")),
        }
    }
}

fn python_result(res: Result<ExecResult, String>) -> ToolResult {
    match res {
        Err(e) => ToolResult::error(format!("sandbox unavailable: {e}")),
        Ok(r) => match r.status {
            ExecStatus::Ok if r.stderr.is_empty() => ToolResult::ok(r.stdout),
            ExecStatus::Ok => ToolResult::ok(format!("{}\n[stderr]\n{}", r.stdout, r.stderr)),
            ExecStatus::Error => ToolResult::error(format!("python error\n{}{}", r.stdout, r.stderr)),
            ExecStatus::Timeout => ToolResult::error(format!("timed out after {:.1}s", r.wall_time)),
        },
    }
}

const CAPTION_DESCRIPTION: &str = "A comprehensive description of ALL visual elements in sentence form or table form, including: text content, numerical values, table structures, objects, layouts, colors, spatial relationships, and any other visual information. Be factual and descriptive - do not infer anything not exists in the original image.";
const SIR_CONFIDENCE_DESCRIPTION: &str = "Your confidence level in the completeness and accuracy of this global caption. 'low' = incomplete analysis or unclear image, 'mid' = good analysis with some limitations, 'high' = comprehensive and thorough analysis.";
const FEEDBACK_DESCRIPTION: &str = "Specific feedback about what additional visual information you need from the translator. Be precise about what's missing or unclear in the current description.";

fn spec(name: &str, description: &str, parameters: Value) -> ToolSpec {
    ToolSpec::new(name, description, parameters).expect("built-in tool schema")
}

/// Every tool known to the system.
pub fn catalog() -> Vec<ToolSpec> {
    let no_params = json!({"type": "object", "properties": {}, "required": []});
    vec![
        spec(
            OCR,
            "Extract text with high precision, useful for image that contains text",
            no_params.clone(),
        ),
        spec(
            READ_TABLE,
            "Parse structured tabular data, useful for spreadsheets, data tables",
            no_params,
        ),
        spec(
            SMART_GRID_CAPTION,
            "Used to analyze specific image regions",
            json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "What to look for in the image."}
                },
                "required": ["query"]
            }),
        ),
        spec(
            TERMINATE_AND_OUTPUT_CAPTION,
            "Output your stored_sir containing your complete objective visual description. This tool will format your caption as proper JSON.",
            json!({
                "type": "object",
                "properties": {
                    "global_caption": {"type": "string", "description": CAPTION_DESCRIPTION},
                    "confidence": {"type": "string", "enum": ["low", "mid", "high"], "description": SIR_CONFIDENCE_DESCRIPTION}
                },
                "required": ["global_caption", "confidence"]
            }),
        ),
        spec(
            PYTHON_EXECUTE,
            "Use for calculations, data analysis, mathematical operations, or any computation. ALWAYS include print() statements to show results.",
            json!({
                "type": "object",
                "properties": {
                    "code": {"type": "string", "description": "The Python code to execute."}
                },
                "required": ["code"]
            }),
        ),
        spec(
            TERMINATE_AND_ANSWER,
            prompts::TERMINATE_AND_ANSWER_DESCRIPTION.trim_end(),
            json!({
                "type": "object",
                "properties": {
                    "answer": {"type": "string", "description": "Your final answer to the question. Please include short answer only. For multiple choice, only include option"},
                    "confidence": {"type": "string", "description": "Your confidence level in this answer.", "enum": ["high", "medium", "low"]},
                    "reasoning": {"type": "string", "description": "Brief explanation of how the SIR information led to this answer."}
                },
                "required": ["answer", "confidence", "reasoning"]
            }),
        ),
        spec(
            TERMINATE_AND_ASK_TRANSLATOR,
            prompts::TERMINATE_AND_ASK_TRANSLATOR_DESCRIPTION.trim_end(),
            json!({
                "type": "object",
                "properties": {
                    "feedback": {"type": "string", "description": FEEDBACK_DESCRIPTION}
                },
                "required": ["feedback"]
            }),
        ),
    ]
}
