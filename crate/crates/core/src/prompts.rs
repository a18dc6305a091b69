//! Versioned prompt templates. Placeholders use `{name}` and are filled by
//! [`render`].

pub const VERSION: &str = "v1";

pub const TRANSLATOR_SYSTEM: &str = include_str!("../prompts/v1/translator_system.txt");
pub const TRANSLATOR_FIRST_STEP: &str = include_str!("../prompts/v1/translator_first_step.txt");
pub const TRANSLATOR_NEXT_STEP: &str = include_str!("../prompts/v1/translator_next_step.txt");
pub const TRANSLATOR_FINAL_STEP: &str = include_str!("../prompts/v1/translator_final_step.txt");
pub const TRANSLATOR_FEEDBACK: &str = include_str!("../prompts/v1/translator_feedback.txt");
pub const SIR_MANAGEMENT: &str = include_str!("../prompts/v1/sir_management.txt");
pub const REFINE_SIR: &str = include_str!("../prompts/v1/refine_sir.txt");

pub const REASONER_SYSTEM: &str = include_str!("../prompts/v1/reasoner_system.txt");
pub const REASONER_NEXT_STEP: &str = include_str!("../prompts/v1/reasoner_next_step.txt");
pub const FORCE_ANSWER: &str = include_str!("../prompts/v1/force_answer.txt");

pub const TERMINATE_AND_ANSWER_DESCRIPTION: &str =
    include_str!("../prompts/v1/terminate_and_answer.txt");
pub const TERMINATE_AND_ASK_TRANSLATOR_DESCRIPTION: &str =
    include_str!("../prompts/v1/terminate_and_ask_translator.txt");

pub const REGION_SELECT: &str = include_str!("../prompts/v1/region_select.txt");
pub const REGION_CAPTION: &str = include_str!("../prompts/v1/region_caption.txt");
pub const OCR: &str = include_str!("../prompts/v1/ocr.txt");
pub const READ_TABLE: &str = include_str!("../prompts/v1/read_table.txt");

/// Appended to the reasoner's step prompt in the last outer iteration.
pub const REASONER_LAST_ITERATION: &str = "FINAL ITERATION: no further visual information can be requested after this round. You are compelled to answer with terminate_and_answer.";

pub const ALL: &[(&str, &str)] = &[
    ("translator_system", TRANSLATOR_SYSTEM),
    ("translator_first_step", TRANSLATOR_FIRST_STEP),
    ("translator_next_step", TRANSLATOR_NEXT_STEP),
    ("translator_final_step", TRANSLATOR_FINAL_STEP),
    ("translator_feedback", TRANSLATOR_FEEDBACK),
    ("sir_management", SIR_MANAGEMENT),
    ("refine_sir", REFINE_SIR),
    ("reasoner_system", REASONER_SYSTEM),
    ("reasoner_next_step", REASONER_NEXT_STEP),
    ("reasoner_last_iteration", REASONER_LAST_ITERATION),
    ("force_answer", FORCE_ANSWER),
    ("terminate_and_answer", TERMINATE_AND_ANSWER_DESCRIPTION),
    ("terminate_and_ask_translator", TERMINATE_AND_ASK_TRANSLATOR_DESCRIPTION),
    ("region_select", REGION_SELECT),
    ("region_caption", REGION_CAPTION),
    ("ocr", OCR),
    ("read_table", READ_TABLE),
];

/// snake_case identifiers that appear in templates but are not tools.
const NON_TOOL_IDENTIFIERS: &[&str] = &["global_caption", "stored_sir", "current_sir", "tool_result"];

/// Replaces each `{key}` with its value. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Tool names referenced by any template: snake_case identifiers that are
/// not known non-tool words, plus the upper-case `OCR` mention.
pub fn mentioned_tool_names() -> Vec<String> {
    let re = regex::Regex::new(r"\b[a-z]+(?:_[a-z]+)+\b").expect("static regex");
    let mut names: Vec<String> = Vec::new();
    for (_, text) in ALL {
        for m in re.find_iter(text) {
            let name = m.as_str();
            if !NON_TOOL_IDENTIFIERS.contains(&name) && !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
        if text.contains("- OCR:") && !names.iter().any(|n| n == "ocr") {
            names.push("ocr".into());
        }
    }
    names.sort();
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_placeholders() {
        let out = render(TRANSLATOR_FEEDBACK, &[("iteration-1", "1"), ("current_sir", "{}"), ("question", "Q?")]);
        assert!(out.starts_with("Your current SIR with reasoning feedback (iteration 1):\n{}\n"));
        assert!(out.contains("help answer the question: Q?"));
        assert!(!out.contains("{question}"));
    }

    #[test]
    fn mentioned_tools() {
        assert_eq!(
            mentioned_tool_names(),
            vec![
                "ocr",
                "python_execute",
                "read_table",
                "smart_grid_caption",
                "terminate_and_answer",
                "terminate_and_ask_translator",
                "terminate_and_output_caption",
            ]
        );
    }
}
