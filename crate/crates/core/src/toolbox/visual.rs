//! Translator-side visual tools. Each one is a handful of vision calls made
//! through the episode's backend.

use image::DynamicImage;

use super::grid::{self, GridRegion, PixelRect};
use super::{Artifact, ToolContext, ToolResult};
use crate::backend::{AgentRole, CallPurpose, ChatRequest, Message};
use crate::prompts;
use crate::task::ImageInput;

pub const NO_TABLE: &str = "NO TABLE DETECTED";
const THUMBNAIL_SIDE: u32 = 512;

/// One vision call: `image` plus `prompt` in a single user message.
pub fn vision_call(
    ctx: &ToolContext<'_>,
    purpose: CallPurpose,
    image: ImageInput,
    prompt: String,
) -> Result<String, String> {
    let request = ChatRequest {
        model: ctx.vision.model.clone(),
        role: AgentRole::Translator,
        purpose,
        messages: vec![Message::user_with_image(image, prompt)],
        tools: Vec::new(),
        max_output_tokens: ctx.vision.max_output_tokens,
        temperature: ctx.vision.temperature,
    };
    ctx.backend
        .chat_complete(&request)
        .map(|r| r.text.unwrap_or_default())
        .map_err(|e| format!("backend: {e}"))
}

/// Pluggable text extraction. The default asks the translator model; an
/// external OCR engine can be swapped in without touching the protocol.
pub trait TextExtractor: Send + Sync {
    fn ocr(&self, image: &ImageInput, ctx: &ToolContext<'_>) -> Result<String, String>;
    /// Raw table text; normalized by the caller.
    fn table(&self, image: &ImageInput, ctx: &ToolContext<'_>) -> Result<String, String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VisionExtractor;

impl TextExtractor for VisionExtractor {
    fn ocr(&self, image: &ImageInput, ctx: &ToolContext<'_>) -> Result<String, String> {
        vision_call(ctx, CallPurpose::Ocr, image.clone(), prompts::OCR.trim_end().to_string())
    }

    fn table(&self, image: &ImageInput, ctx: &ToolContext<'_>) -> Result<String, String> {
        vision_call(
            ctx,
            CallPurpose::ReadTable,
            image.clone(),
            prompts::READ_TABLE.trim_end().to_string(),
        )
    }
}

pub fn ocr(extractor: &dyn TextExtractor, image: &ImageInput, ctx: &ToolContext<'_>) -> ToolResult {
    match extractor.ocr(image, ctx) {
        Ok(text) => ToolResult::ok(text),
        Err(e) => ToolResult::error(e),
    }
}

pub fn read_table(extractor: &dyn TextExtractor, image: &ImageInput, ctx: &ToolContext<'_>) -> ToolResult {
    match extractor.table(image, ctx) {
        Ok(raw) => ToolResult::ok(normalize_table(&raw)),
        Err(e) => ToolResult::error(e),
    }
}

fn is_separator_row(line: &str) -> bool {
    let t = line.trim();
    t.contains('-') && t.chars().all(|c| matches!(c, '|' | '-' | ':' | '+' | ' '))
}

/// Normalizes a model's table reply to pipe-delimited rows, one per line,
/// padding ragged rows with empty cells to the widest row. Markdown outer
/// pipes and separator rows are dropped; tab-separated lines are accepted.
pub fn normalize_table(raw: &str) -> String {
    if raw.trim().is_empty() || raw.to_ascii_uppercase().contains(NO_TABLE) {
        return NO_TABLE.to_string();
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") || is_separator_row(line) {
            continue;
        }
        let cells: Vec<String> = if line.contains('|') {
            let inner = line.strip_prefix('|').unwrap_or(line);
            let inner = inner.strip_suffix('|').unwrap_or(inner);
            inner.split('|').map(|c| c.trim().to_string()).collect()
        } else if line.contains('\t') {
            line.split('\t').map(|c| c.trim().to_string()).collect()
        } else {
            vec![line.to_string()]
        };
        rows.push(cells);
    }
    if rows.is_empty() {
        return NO_TABLE.to_string();
    }
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.iter_mut().for_each(|r| r.resize(width, String::new()));
    rows.iter().map(|r| r.join("|")).collect::<Vec<_>>().join("\n")
}

fn crop(img: &DynamicImage, rect: PixelRect) -> DynamicImage {
    img.crop_imm(rect.x0, rect.y0, rect.width(), rect.height())
}

fn encode(img: &DynamicImage) -> Result<ImageInput, String> {
    ImageInput::from_dynamic(img).map_err(|e| format!("encoding crop: {e}"))
}

fn region_listing(regions: &[GridRegion]) -> String {
    regions
        .iter()
        .map(|r| {
            let p = r.pixel_rect;
            format!("{}: x {}-{}, y {}-{}", r.label(), p.x0, p.x1, p.y0, p.y1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Grid the image, let the model pick 1-3 regions relevant to `query`,
/// caption each crop. Falls back to the center 2x2 block when the selection
/// names no valid region.
pub fn smart_grid_caption(image: &ImageInput, query: &str, ctx: &ToolContext<'_>) -> ToolResult {
    let decoded = match image.decode() {
        Ok(d) => d,
        Err(e) => return ToolResult::error(format!("image not decodable: {e}")),
    };
    let regions = match grid::grid_partition(decoded.width(), decoded.height()) {
        Ok(r) => r,
        Err(e) => return ToolResult::error(e.to_string()),
    };

    let thumb = if decoded.width().max(decoded.height()) > THUMBNAIL_SIDE {
        decoded.thumbnail(THUMBNAIL_SIDE, THUMBNAIL_SIDE)
    } else {
        decoded.clone()
    };
    let thumb = match encode(&thumb) {
        Ok(t) => t,
        Err(e) => return ToolResult::error(e),
    };
    let listing = region_listing(&regions);
    let select_prompt = prompts::render(prompts::REGION_SELECT, &[("regions", &listing), ("query", query)]);
    let reply = match vision_call(ctx, CallPurpose::RegionSelect, thumb, select_prompt) {
        Ok(r) => r,
        Err(e) => return ToolResult::error(e),
    };

    let picked = grid::parse_selection(&reply);
    let targets: Vec<(String, PixelRect)> = if picked.is_empty() {
        vec![("center".to_string(), grid::center_block(&regions))]
    } else {
        picked
            .iter()
            .map(|&(r, c)| {
                let region = &regions[(r * grid::GRID_SIZE + c) as usize];
                (region.label(), region.pixel_rect)
            })
            .collect()
    };

    let mut captions = Vec::new();
    let mut artifacts = Vec::new();
    for (label, rect) in &targets {
        let patch = match encode(&crop(&decoded, *rect)) {
            Ok(p) => p,
            Err(e) => return ToolResult::error(e),
        };
        let prompt = prompts::render(prompts::REGION_CAPTION, &[("region", label), ("query", query)]);
        match vision_call(ctx, CallPurpose::RegionCaption, patch.clone(), prompt) {
            Ok(text) => captions.push(format!("region {label}: {}", text.trim())),
            Err(e) => return ToolResult::error(e),
        }
        artifacts.push(Artifact {
            kind: format!("crop {label}"),
            bytes: patch.bytes.as_ref().clone(),
        });
    }

    let header = if picked.is_empty() {
        "selected regions: fallback center (1,1)-(2,2)".to_string()
    } else {
        format!(
            "selected regions: {}",
            targets.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(", ")
        )
    };
    let mut result = ToolResult::ok(format!("{header}; {}", captions.join("; ")));
    result.artifacts = artifacts;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_two_by_two() {
        assert_eq!(normalize_table("a|b\nc|d"), "a|b\nc|d");
        assert_eq!(normalize_table("| a | b |\n|---|---|\n| c | d |\n"), "a|b\nc|d");
        assert_eq!(normalize_table("a\tb\nc\td"), "a|b\nc|d");
    }

    #[test]
    fn table_sentinel() {
        assert_eq!(normalize_table(""), NO_TABLE);
        assert_eq!(normalize_table("no table detected."), NO_TABLE);
        assert_eq!(normalize_table("```\n```"), NO_TABLE);
    }

    #[test]
    fn ragged_rows_are_padded() {
        assert_eq!(normalize_table("h1|h2|h3\nx\ny|z"), "h1|h2|h3\nx||\ny|z|");
        assert_eq!(normalize_table("a||c"), "a||c");
    }

    proptest! {
        #[test]
        fn normalized_rows_have_equal_width(
            rows in prop::collection::vec(prop::collection::vec("[a-z0-9][a-z0-9 ]{0,4}", 1..6), 1..8)
        ) {
            let raw = rows.iter().map(|r| r.join("|")).collect::<Vec<_>>().join("\n");
            let out = normalize_table(&raw);
            let widths: Vec<usize> = out.lines().map(|l| l.split('|').count()).collect();
            let max = rows.iter().map(Vec::len).max().unwrap();
            prop_assert_eq!(widths.len(), rows.len());
            prop_assert!(widths.iter().all(|&w| w == max));
        }
    }
}
