//! Question, options and image for one episode.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Encoded image bytes plus their media type. Cloning is cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub bytes: Arc<Vec<u8>>,
    pub media_type: String,
}

impl ImageInput {
    pub fn new(bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        Self {
            bytes: Arc::new(bytes),
            media_type: media_type.into(),
        }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let media_type = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("jpg") | Some("jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "image/png",
        };
        Ok(Self::new(bytes, media_type))
    }

    /// PNG-encodes an in-memory image.
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self, image::ImageError> {
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(Self::new(buf.into_inner(), "image/png"))
    }

    pub fn decode(&self) -> Result<image::DynamicImage, image::ImageError> {
        image::load_from_memory(&self.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionChoice {
    pub label: String,
    pub text: String,
}

impl OptionChoice {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("duplicate option label `{0}`")]
    DuplicateLabel(String),
}

#[derive(Debug, Clone)]
pub struct Task {
    pub task_id: String,
    pub question: String,
    pub options: Vec<OptionChoice>,
    pub image: ImageInput,
}

impl Task {
    pub fn new(
        task_id: impl Into<String>,
        question: impl Into<String>,
        options: Vec<OptionChoice>,
        image: ImageInput,
    ) -> Result<Self, TaskError> {
        let task = Self {
            task_id: task_id.into(),
            question: question.into(),
            options,
            image,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.question.trim().is_empty() {
            return Err(TaskError::EmptyQuestion);
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if !seen.insert(opt.label.as_str()) {
                return Err(TaskError::DuplicateLabel(opt.label.clone()));
            }
        }
        Ok(())
    }

    pub fn is_multiple_choice(&self) -> bool {
        !self.options.is_empty()
    }

    /// `Question: ...` followed by one `L. text` line per option.
    pub fn render_question(&self) -> String {
        let mut out = format!("Question: {}", self.question);
        if !self.options.is_empty() {
            out.push_str("\nOptions:");
            for opt in &self.options {
                out.push_str(&format!("\n{}. {}", opt.label, opt.text));
            }
        }
        out
    }
}

/// Parses `A:text` style option arguments.
pub fn parse_option_arg(arg: &str) -> Option<OptionChoice> {
    let (label, text) = arg.split_once(':')?;
    let label = label.trim();
    if label.is_empty() {
        return None;
    }
    Some(OptionChoice::new(label, text.trim()))
}
