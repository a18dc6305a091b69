//! Canned scenarios for examples, integration tests and offline demos.
//! Everything here runs against [`ScriptedBackend`] and needs no network.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use serde_json::json;

use crate::backend::{ChatResponse, ScriptMatch, ScriptedBackend};
use crate::config::{RetryPolicy, RunConfig};
use crate::task::{ImageInput, OptionChoice, Task};
use crate::toolbox::{FixedOutputRunner, Toolbox, SMART_GRID_CAPTION, TERMINATE_AND_ANSWER, TERMINATE_AND_ASK_TRANSLATOR, TERMINATE_AND_OUTPUT_CAPTION};

/// Substrings that identify each request kind in scripted matching.
pub const TRANSLATOR_STEP: &str = "Visual-Only Captioner";
pub const REASONER_STEP: &str = "SUFFICIENT SPECIFIC DETAILS";
pub const FORCE_STEP: &str = "FINAL ANSWER REQUIRED";
pub const REFINE: &str = "SIR UPDATE TASK";
pub const REGION_SELECT: &str = "REGION SELECTION";
pub const REGION_CAPTION: &str = "REGION CAPTION";

/// Defaults with retries that never sleep.
pub fn offline_config() -> RunConfig {
    RunConfig {
        retry: RetryPolicy::immediate(),
        ..RunConfig::default()
    }
}

/// Toolbox whose python runner always prints `42`.
pub fn offline_toolbox() -> Arc<Toolbox> {
    Arc::new(Toolbox::with_runner(Arc::new(FixedOutputRunner::new("42\n"))))
}

/// A 64x64 drawing of a grey church front with a small poster on its
/// lower left wall, inside grid cell (2,1). Byte-identical on every call.
pub fn poster_png() -> Vec<u8> {
    let mut img = RgbImage::from_pixel(64, 64, Rgb([180, 200, 230]));
    for y in 12..64 {
        for x in 16..56 {
            img.put_pixel(x, y, Rgb([150, 150, 150]));
        }
    }
    for y in 34..46 {
        for x in 18..30 {
            img.put_pixel(x, y, Rgb([240, 240, 240]));
        }
    }
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("encoding an in-memory png");
    out
}

pub fn animal_options() -> Vec<OptionChoice> {
    [("A", "cat"), ("B", "dove"), ("C", "dog"), ("D", "horse")]
        .into_iter()
        .map(|(l, t)| OptionChoice::new(l, t))
        .collect()
}

pub fn poster_task() -> Task {
    Task::new(
        "poster-animal",
        "What animal is shown on the poster next to the building?",
        animal_options(),
        ImageInput::new(poster_png(), "image/png"),
    )
    .expect("fixture task is valid")
}

pub fn caption(text: &str, confidence: &str) -> ChatResponse {
    ChatResponse::tool_call(
        Some("The description covers what the question needs."),
        TERMINATE_AND_OUTPUT_CAPTION,
        json!({"global_caption": text, "confidence": confidence}),
    )
}

pub fn answer(label: &str, confidence: &str, reasoning: &str) -> ChatResponse {
    ChatResponse::tool_call(
        Some("The description names the answer."),
        TERMINATE_AND_ANSWER,
        json!({"answer": label, "confidence": confidence, "reasoning": reasoning}),
    )
}

pub fn feedback(text: &str) -> ChatResponse {
    ChatResponse::tool_call(
        Some("The description is missing a detail."),
        TERMINATE_AND_ASK_TRANSLATOR,
        json!({"feedback": text}),
    )
}

pub const POSTER_FIRST_CAPTION: &str = "A grey stone church front under a pale sky. A small poster is attached to the wall at the lower left; a person on the poster holds a white dove.";
pub const POSTER_FINAL_CAPTION: &str = "A grey stone church front under a pale sky. A small poster at the lower left shows a person holding a white dove with spread wings.";

/// The worked case: one grid zoom on the poster, a refined caption, a
/// confident terminate, and a direct answer. Six backend calls.
pub fn poster_script() -> ScriptedBackend {
    ScriptedBackend::new()
        .with(
            ScriptMatch::contains(TRANSLATOR_STEP),
            ChatResponse::tool_call(
                Some("The image shows a church building. There is a poster on the wall but its content is too small to read, so I will zoom in on it."),
                SMART_GRID_CAPTION,
                json!({"query": "the animal shown in the poster on the wall"}),
            )
            .with_usage(1500, 60),
        )
        .with(ScriptMatch::contains(REGION_SELECT), ChatResponse::from_text("9").with_usage(400, 2))
        .with(
            ScriptMatch::contains(REGION_CAPTION),
            ChatResponse::from_text("Poster featuring a person holding a dove").with_usage(300, 12),
        )
        .with(
            ScriptMatch::contains(REFINE),
            ChatResponse::from_text(json!({"global_caption": POSTER_FIRST_CAPTION, "confidence": "mid"}).to_string())
                .with_usage(600, 50),
        )
        .with(
            ScriptMatch::contains(TRANSLATOR_STEP),
            caption(POSTER_FINAL_CAPTION, "high").with_usage(1900, 55),
        )
        .with(
            ScriptMatch::contains(REASONER_STEP),
            answer("B", "high", "The poster shows a person holding a dove.").with_usage(700, 40),
        )
}

/// A reasoner that asks for more detail `rounds` times before answering
/// `gold`. The forced answer, reached only when the cap runs out first,
/// is `wrong`.
pub fn feedback_rounds_script(rounds: u32, gold: &str, wrong: &str) -> ScriptedBackend {
    let backend = ScriptedBackend::new();
    for r in 0..=rounds {
        backend.push(
            ScriptMatch::contains(TRANSLATOR_STEP),
            caption(&format!("caption after {r} feedback rounds"), "high").with_usage(1000, 30),
        );
        let reply = if r < rounds {
            feedback("describe the poster in more detail")
        } else {
            answer(gold, "high", "enough detail")
        };
        backend.push(ScriptMatch::contains(REASONER_STEP), reply.with_usage(500, 20));
    }
    backend.push(
        ScriptMatch::contains(FORCE_STEP),
        answer(wrong, "low", "guessing").with_usage(500, 20),
    );
    backend
}

/// Writes `poster.png` and a `dataset.jsonl` of `n` four-option records
/// (ids `q00`, `q01`, ...; gold always `B`) into `dir`.
pub fn write_poster_dataset(dir: &Path, n: usize) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("poster.png"), poster_png())?;
    let mut body = String::new();
    for i in 0..n {
        let rec = json!({
            "id": format!("q{i:02}"),
            "question": "What animal is shown on the poster next to the building?",
            "options": {"A": "cat", "B": "dove", "C": "dog", "D": "horse"},
            "image": "poster.png",
            "gold": "B",
        });
        body.push_str(&rec.to_string());
        body.push('\n');
    }
    let path = dir.join("dataset.jsonl");
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Record index parsed from a `qNN` id.
pub fn record_index(id: &str) -> usize {
    id.trim_start_matches('q').parse().unwrap_or(0)
}
