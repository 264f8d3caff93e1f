//! Annotator and moderator prompts, and parsing of what the models send back.
//!
//! Templates are plain text with `{{name}}` placeholders. The built-in set is
//! compiled in; [`Templates::from_dir`] lets operators override any of them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{Annotation, Category, Document};
use crate::guidelines::{Author, Edit, GuidelineDoc, Revision};
use crate::moderation::{Discrepancy, InfluencingFactor, ModerationReport, ReportItem};

pub const ANNOTATOR_SCHEMA: &str = include_str!("../templates/annotator_schema.json");
pub const REPORT_SCHEMA: &str = include_str!("../templates/report_schema.json");
pub const REVISION_SCHEMA: &str = include_str!("../templates/revision_schema.json");

const ANNOTATOR_TEMPLATE: &str = include_str!("../templates/annotator.txt");
const ANALYZE_TEMPLATE: &str = include_str!("../templates/moderator_analyze.txt");
const UPDATE_TEMPLATE: &str = include_str!("../templates/moderator_update.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no discrepancies to analyze")]
    EmptyDiscrepancies,
    #[error("no JSON payload could be extracted from the model output")]
    Unparseable,
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy)]
struct TemplateSpec {
    file: &'static str,
    required: &'static [&'static str],
    optional: &'static [&'static str],
}

const ANNOTATOR_SPEC: TemplateSpec = TemplateSpec {
    file: "annotator.txt",
    required: &["text", "guidelines"],
    optional: &["annotator_schema"],
};
const ANALYZE_SPEC: TemplateSpec = TemplateSpec {
    file: "moderator_analyze.txt",
    required: &["discrepancies", "guidelines"],
    optional: &["factors", "documents", "report_schema"],
};
const UPDATE_SPEC: TemplateSpec = TemplateSpec {
    file: "moderator_update.txt",
    required: &["report", "guidelines", "revision_schema"],
    optional: &["section_ids"],
};

fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_key(&after[..close]) => {
                out.push(&after[..close]);
                rest = &after[close + 2..];
            }
            _ => rest = &rest[open + 2..],
        }
    }
    out
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// Single-pass substitution: replacement text is never re-scanned.
fn fill(template: &str, values: &BTreeMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_key(&after[..close]) => {
                out.push_str(values.get(&after[..close]).copied().unwrap_or_default());
                rest = &after[close + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn validate(spec: TemplateSpec, template: &str) -> Result<(), PromptError> {
    let used: HashSet<&str> = placeholders(template).into_iter().collect();
    for key in &used {
        if !spec.required.contains(key) && !spec.optional.contains(key) {
            return Err(PromptError::Template {
                name: spec.file.into(),
                message: format!("unknown placeholder {{{{{key}}}}}"),
            });
        }
    }
    for key in spec.required {
        if !used.contains(key) {
            return Err(PromptError::Template {
                name: spec.file.into(),
                message: format!("missing placeholder {{{{{key}}}}}"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub annotator: String,
    pub moderator_analyze: String,
    pub moderator_update: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            annotator: ANNOTATOR_TEMPLATE.to_string(),
            moderator_analyze: ANALYZE_TEMPLATE.to_string(),
            moderator_update: UPDATE_TEMPLATE.to_string(),
        }
    }

    /// Loads `annotator.txt`, `moderator_analyze.txt` and `moderator_update.txt`
    /// from `dir`, falling back to the built-in template for any missing file.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        for (spec, slot) in [
            (ANNOTATOR_SPEC, &mut t.annotator),
            (ANALYZE_SPEC, &mut t.moderator_analyze),
            (UPDATE_SPEC, &mut t.moderator_update),
        ] {
            let path = dir.join(spec.file);
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    validate(spec, &text)?;
                    *slot = text;
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(t)
    }
}

/// Builds prompts from a template set.
#[derive(Debug, Clone, Default)]
pub struct PromptBuilder {
    templates: Templates,
}

impl PromptBuilder {
    pub fn new(templates: Templates) -> Self {
        Self { templates }
    }

    /// The baseline prompt when `guideline` is `None`; otherwise the same prompt with
    /// the rendered guideline inserted as one extra block.
    pub fn annotator_prompt(&self, doc: &Document, guideline: Option<&GuidelineDoc>) -> String {
        let block = guideline
            .map(|g| format!("\n[ANNOTATION GUIDELINES]\n{}", g.render()))
            .unwrap_or_default();
        let values = BTreeMap::from([
            ("annotator_schema", ANNOTATOR_SCHEMA.trim_end()),
            ("guidelines", block.as_str()),
            ("text", doc.text.as_str()),
        ]);
        fill(&self.templates.annotator, &values)
    }

    pub fn moderator_analyze_prompt(
        &self,
        discrepancies: &[Discrepancy],
        guideline: &GuidelineDoc,
        batch: &[&Document],
    ) -> Result<String, PromptError> {
        if discrepancies.is_empty() {
            return Err(PromptError::EmptyDiscrepancies);
        }
        let mut factors = String::new();
        for f in InfluencingFactor::CLASSES {
            let _ = writeln!(factors, "- {}: {}", f.name(), f.gloss());
        }
        let mut documents = String::new();
        for d in batch {
            let _ = writeln!(documents, "PMID {}: {}", d.doc_id, d.text);
        }
        let listing = render_discrepancies(discrepancies);
        let rendered = guideline.render();
        let values = BTreeMap::from([
            ("discrepancies", listing.trim_end()),
            ("documents", documents.trim_end()),
            ("factors", factors.trim_end()),
            ("guidelines", rendered.trim_end()),
            ("report_schema", REPORT_SCHEMA.trim_end()),
        ]);
        Ok(fill(&self.templates.moderator_analyze, &values))
    }

    pub fn moderator_update_prompt(&self, report: &ModerationReport, guideline: &GuidelineDoc) -> String {
        let section_ids = guideline
            .sections()
            .iter()
            .map(|s| format!("- {} ({})", s.section_id, s.heading))
            .collect::<Vec<_>>()
            .join("\n");
        let mut listing = String::new();
        for (i, item) in report.items.iter().enumerate() {
            let d = &item.discrepancy;
            let _ = writeln!(listing, "{i}. {} in PMID {}: {}", d.kind, d.doc_id, describe(d));
            let _ = writeln!(listing, "   factor: {}", item.factor);
            let _ = writeln!(listing, "   cause: {}", item.cause);
            let _ = writeln!(listing, "   solution: {}", item.solution);
        }
        if report.items.is_empty() {
            listing.push_str("(no items)\n");
        }
        let rendered = guideline.render();
        let values = BTreeMap::from([
            ("guidelines", rendered.trim_end()),
            ("report", listing.trim_end()),
            ("revision_schema", REVISION_SCHEMA.trim_end()),
            ("section_ids", section_ids.as_str()),
        ]);
        fill(&self.templates.moderator_update, &values)
    }
}

fn describe(d: &Discrepancy) -> String {
    let fmt_ann = |a: &Annotation| format!("\"{}\" [{}, {}) {}", a.mention, a.start, a.end, a.category);
    match (&d.predicted, &d.gold) {
        (Some(p), Some(g)) => format!("predicted {} / gold {}", fmt_ann(p), fmt_ann(g)),
        (Some(p), None) => format!("predicted {} (not in gold)", fmt_ann(p)),
        (None, Some(g)) => format!("gold {} (missed)", fmt_ann(g)),
        (None, None) => String::new(),
    }
}

fn render_discrepancies(discrepancies: &[Discrepancy]) -> String {
    let mut out = String::new();
    for (i, d) in discrepancies.iter().enumerate() {
        let _ = writeln!(out, "{i}. {} in PMID {}: {}", d.kind, d.doc_id, describe(d));
        let _ = writeln!(out, "   context: \"{}\"", d.context);
    }
    out
}

pub fn build_annotator_prompt(doc: &Document, guideline: Option<&GuidelineDoc>) -> String {
    PromptBuilder::default().annotator_prompt(doc, guideline)
}

pub fn build_moderator_analyze_prompt(
    discrepancies: &[Discrepancy],
    guideline: &GuidelineDoc,
    batch: &[&Document],
) -> Result<String, PromptError> {
    PromptBuilder::default().moderator_analyze_prompt(discrepancies, guideline, batch)
}

pub fn build_moderator_update_prompt(report: &ModerationReport, guideline: &GuidelineDoc) -> String {
    PromptBuilder::default().moderator_update_prompt(report, guideline)
}

/// Finds the JSON payload in a model reply: the whole reply, a fenced block, or the
/// first parseable object/array embedded in prose.
pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let mut rest = trimmed;
    while let Some(open) = rest.find("```") {
        let body = &rest[open + 3..];
        let body = body.split_once('\n').map_or("", |(_, b)| b);
        let Some(close) = body.find("```") else { break };
        if let Ok(v) = serde_json::from_str(body[..close].trim()) {
            return Some(v);
        }
        rest = &body[close + 3..];
    }
    for (i, ch) in trimmed.char_indices() {
        if ch == '{' || ch == '[' {
            let mut stream = serde_json::Deserializer::from_str(&trimmed[i..]).into_iter::<Value>();
            if let Some(Ok(v)) = stream.next() {
                return Some(v);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputWarning {
    /// The offending item, as JSON.
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub annotations: Vec<Annotation>,
    pub warnings: Vec<OutputWarning>,
}

/// Byte offsets of each char boundary, plus the end.
fn char_starts(text: &str) -> Vec<usize> {
    text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len())).collect()
}

/// Converts annotator output into offset-exact annotations over `doc.text`.
///
/// Model-supplied offsets are only hints. Each mention is placed at its hinted start
/// if the text there matches and the span is free, otherwise at the leftmost free
/// occurrence. Items that cannot be placed are reported as warnings.
pub fn parse_annotator_output(raw: &str, doc: &Document) -> Result<ParsedOutput, PromptError> {
    let payload = extract_json(raw).ok_or(PromptError::Unparseable)?;
    let items = match payload {
        Value::Array(items) => items,
        Value::Object(mut map) => match map.remove("annotations") {
            Some(Value::Array(items)) => items,
            _ => return Err(PromptError::Unparseable),
        },
        _ => return Err(PromptError::Unparseable),
    };

    let starts = char_starts(&doc.text);
    let char_of_byte = |b: usize| starts.binary_search(&b).ok();
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut out = ParsedOutput::default();

    for item in items {
        let warn = |reason: &str| OutputWarning {
            item: item.to_string(),
            reason: reason.to_string(),
        };
        let Some(obj) = item.as_object() else {
            out.warnings.push(warn("item is not an object"));
            continue;
        };
        let Some(mention) = obj.get("mention").and_then(Value::as_str).filter(|m| !m.is_empty()) else {
            out.warnings.push(warn("missing mention"));
            continue;
        };
        let label = obj.get("category").and_then(Value::as_str).unwrap_or_default();
        let Some(category) = Category::from_loose(label) else {
            out.warnings.push(warn(&format!("invalid category {label:?}")));
            continue;
        };
        let len = mention.chars().count();

        let hinted = obj
            .get("start")
            .and_then(Value::as_u64)
            .map(|s| s as usize)
            .filter(|&s| doc.slice(s, s + len) == Some(mention) && !taken.contains(&(s, s + len)));
        let placed = hinted.or_else(|| {
            let mut from = 0;
            while let Some(pos) = doc.text[from..].find(mention) {
                let byte = from + pos;
                let start = char_of_byte(byte).expect("match starts on a char boundary");
                if !taken.contains(&(start, start + len)) {
                    return Some(start);
                }
                from = byte + doc.text[byte..].chars().next().map_or(1, char::len_utf8);
            }
            None
        });
        let Some(start) = placed else {
            let reason = if doc.text.contains(mention) {
                "every occurrence is already annotated"
            } else {
                "mention does not occur in the text"
            };
            out.warnings.push(warn(reason));
            continue;
        };
        taken.insert((start, start + len));
        out.annotations
            .push(Annotation::new(doc.doc_id.as_str(), start, start + len, mention, category));
    }
    out.annotations.sort_by_key(Annotation::sort_key);
    Ok(out)
}

/// Reads the analysis reply into report items. Items naming an unknown discrepancy
/// are skipped; unknown factor names become `unclassified`.
pub fn parse_report_items(raw: &str, discrepancies: &[Discrepancy]) -> Result<Vec<ReportItem>, PromptError> {
    let payload = extract_json(raw).ok_or(PromptError::Unparseable)?;
    let items = match payload {
        Value::Array(items) => items,
        Value::Object(mut map) => match map.remove("items") {
            Some(Value::Array(items)) => items,
            _ => return Err(PromptError::Unparseable),
        },
        _ => return Err(PromptError::Unparseable),
    };
    let text = |o: &serde_json::Map<String, Value>, key: &str| {
        o.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
    };
    Ok(items
        .iter()
        .filter_map(Value::as_object)
        .filter_map(|o| {
            let idx = o.get("discrepancy").and_then(Value::as_u64)? as usize;
            let discrepancy = discrepancies.get(idx)?.clone();
            Some(ReportItem {
                discrepancy,
                cause: text(o, "cause"),
                factor: InfluencingFactor::from_name(&text(o, "factor")),
                solution: text(o, "solution"),
            })
        })
        .collect())
}

#[derive(Deserialize)]
struct WireRevision {
    #[serde(default)]
    rationale: String,
    edits: Vec<Edit>,
}

/// Reads the update reply into an LLM-authored revision.
pub fn parse_revision(raw: &str) -> Result<Revision, PromptError> {
    let payload = extract_json(raw).ok_or(PromptError::Unparseable)?;
    let wire: WireRevision = serde_json::from_value(payload).map_err(|_| PromptError::Unparseable)?;
    Ok(Revision {
        edits: wire.edits,
        rationale: wire.rationale,
        author: Author::Llm,
        source_report: None,
    })
}
