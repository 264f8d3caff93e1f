//! A deterministic stand-in for the model, used to record the replay fixture
//! cassette and to drive engine tests without one.
//!
//! The annotator answers depend on the document and on whether the prompt's
//! guideline contains [`MARKER`], which only the revised guideline does. Under the
//! original guideline batch 1 scores per-document F1 of 1, 2/5 and 0; under the
//! revised one it scores 1 everywhere. Batch 2 scores 1, 1 and 2/3 either way.

#![allow(dead_code)]

use gforge_core::guidelines::Edit;
use gforge_engine::ReviewDecision;
use gforge_llm::{Completion, CompletionRequest, TransportError};
use serde_json::{json, Value};

/// Text that only revised guidelines contain.
pub const MARKER: &str = "Gene symbols are not diseases";

fn annotations(items: Value) -> String {
    json!({ "annotations": items }).to_string()
}

fn annotator_reply(text: &str, informed: bool) -> String {
    if text.starts_with("Wilson disease") {
        annotations(json!([
            {"mention": "Wilson disease", "category": "SpecificDisease", "start": 0},
            {"mention": "acute liver failure", "category": "SpecificDisease", "start": 29},
            {"mention": "Wilson disease", "category": "SpecificDisease"},
            {"mention": "hemolytic anemia", "category": "Specific Disease"}
        ]))
    } else if text.starts_with("Arrhythmia") {
        if informed {
            annotations(json!([
                {"mention": "hypertrophic cardiomyopathy", "category": "SpecificDisease", "start": 19},
                {"mention": "Inherited cardiac disorders", "category": "DiseaseClass", "start": 48},
                {"mention": "HCM", "category": "Modifier", "start": 138}
            ]))
        } else {
            annotations(json!([
                {"mention": "hypertrophic cardiomyopathy", "category": "SpecificDisease", "start": 19},
                {"mention": "HCM", "category": "SpecificDisease", "start": 138}
            ]))
        }
    } else if text.starts_with("Loss of function") {
        if informed {
            annotations(json!([
                {"mention": "colorectal tumours", "category": "DiseaseClass"},
                {"mention": "familial adenomatous polyposis", "category": "SpecificDisease"}
            ]))
        } else {
            "Here is what I found:\n```json\n[{\"mention\": \"APC\", \"category\": \"DiseaseClass\"}]\n```\n".into()
        }
    } else if text.starts_with("Duchenne") {
        annotations(json!([
            {"mention": "Duchenne muscular dystrophy", "category": "SpecificDisease", "start": 0},
            {"mention": "DMD", "category": "SpecificDisease"},
            {"mention": "DMD", "category": "SpecificDisease"}
        ]))
    } else if text.starts_with("Breast and ovarian") {
        annotations(json!([
            {"mention": "Breast and ovarian cancer", "category": "CompositeMention", "start": 0},
            {"mention": "cancer", "category": "DiseaseClass", "start": 87}
        ]))
    } else if text.starts_with("Cystic fibrosis") {
        annotations(json!([{"mention": "Cystic fibrosis", "category": "SpecificDisease", "start": 0}]))
    } else {
        annotations(json!([]))
    }
}

fn factor_for(mention: &str) -> &'static str {
    if mention.len() <= 5 && mention.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
        "Ambiguous Abbreviations and Acronyms"
    } else if mention.contains("disorders") || mention.contains("tumours") {
        "Generic or Vague Descriptors"
    } else {
        "Miscellaneous or Low-Frequency Terms"
    }
}

/// Builds one report item per listed discrepancy.
fn analyze_reply(prompt: &str) -> String {
    let listing = prompt.split("[DISCREPANCIES]").nth(1).unwrap_or_default();
    let mut items = Vec::new();
    for line in listing.lines() {
        let Some((idx, rest)) = line.split_once(". ") else { continue };
        let Ok(idx) = idx.trim().parse::<usize>() else { continue };
        let mention = rest.split('"').nth(1).unwrap_or_default();
        let kind = rest.split(" in PMID").next().unwrap_or_default();
        items.push(json!({
            "discrepancy": idx,
            "cause": format!("{kind} on \"{mention}\""),
            "factor": factor_for(mention),
            "solution": format!("clarify how to treat \"{mention}\""),
        }));
    }
    json!({ "items": items }).to_string()
}

fn update_reply() -> String {
    json!({
        "rationale": "Most errors involve abbreviations and broad class names.",
        "edits": [
            {"op": "append_example", "section_id": "modifier",
             "text": "\"We followed HCM patients\" -> annotate \"HCM\" as Modifier."},
            {"op": "append_example", "section_id": "disease-class",
             "text": "\"colorectal tumours\" names a group of diseases."},
            {"op": "add_section", "heading": "Abbreviations",
             "body": format!("{MARKER}: do not annotate APC or BRCA1 on their own. Give a disease abbreviation the category its long form would get.")}
        ]
    })
    .to_string()
}

pub fn respond(request: &CompletionRequest) -> Result<Completion, TransportError> {
    let prompt = &request.prompt;
    let text = if prompt.contains("[DISCREPANCIES]") {
        analyze_reply(prompt)
    } else if prompt.contains("[MODERATION REPORT]") {
        update_reply()
    } else {
        let doc_text = prompt.rsplit("Text:\n").next().unwrap_or_default();
        let informed = prompt.contains("[ANNOTATION GUIDELINES]") && prompt.contains(MARKER);
        annotator_reply(doc_text, informed)
    };
    Ok(Completion { text, usage: None })
}

/// The reviewer edit used by the edit path of the fixture.
pub fn human_edit() -> ReviewDecision {
    ReviewDecision::Edit {
        edits: vec![Edit::ReplaceBody {
            section_id: "span-boundaries".into(),
            body: format!(
                "Annotate the shortest span that still names the whole disease. {MARKER}; \
                 leave APC and BRCA1 unmarked unless they modify a disease name."
            ),
        }],
        rationale: "reviewer wording".into(),
    }
}
