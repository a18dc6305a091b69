//! Grid geometry, selection parsing, and one scripted smart_grid_caption
//! call on the poster image.
//!
//! cargo run --example smart_grid

use serde_json::json;

use sirloop::backend::{ChatResponse, ScriptMatch, ScriptedBackend};
use sirloop::fixtures;
use sirloop::task::ImageInput;
use sirloop::toolbox::grid::parse_selection;
use sirloop::toolbox::{grid_partition, ToolContext, VisionSettings, SMART_GRID_CAPTION};

fn main() {
    let (w, h) = (401, 403);
    let regions = grid_partition(w, h).expect("large enough");
    println!("{w}x{h} grid:");
    for row in regions.chunks(4) {
        let cells: Vec<String> = row
            .iter()
            .map(|r| format!("{}x{}", r.pixel_rect.width(), r.pixel_rect.height()))
            .collect();
        println!("  {}", cells.join("  "));
    }

    for reply in ["(2,1)", "Regions [0,0] and [3, 3]", "9", "patches 9 and 10", "nothing useful"] {
        println!("selection {reply:?} -> {:?}", parse_selection(reply));
    }

    let backend = ScriptedBackend::new()
        .with(ScriptMatch::contains(fixtures::REGION_SELECT), ChatResponse::from_text("9"))
        .with(
            ScriptMatch::contains(fixtures::REGION_CAPTION),
            ChatResponse::from_text("Poster featuring a person holding a dove"),
        );
    let image = ImageInput::new(fixtures::poster_png(), "image/png");
    let vision = VisionSettings {
        model: "vision-model".into(),
        max_output_tokens: 1024,
        temperature: 0.0,
    };
    let ctx = ToolContext {
        image: Some(&image),
        backend: &backend,
        vision: &vision,
    };
    let toolbox = fixtures::offline_toolbox();
    let result = toolbox.execute(SMART_GRID_CAPTION, &json!({"query": "the animal on the poster"}), &ctx);
    println!("ok={} content={}", result.ok, result.content);
    for a in &result.artifacts {
        println!("  artifact {} ({} bytes)", a.kind, a.bytes.len());
    }

    let missing = toolbox.execute(SMART_GRID_CAPTION, &json!({}), &ctx);
    println!("without a query: {}", missing.content);
}
