//! Versioned, sectioned annotation guidelines.
//!
//! Source text uses `#`-prefixed heading lines to start sections. Inside a section,
//! lines starting with `Example:` are collected as edge-case examples; everything
//! else is body. A body line that would otherwise read as a heading or an example
//! is written with a leading backslash, which parsing strips again.
//!
//! Text before the first heading becomes an `Introduction` section. A document's
//! version id is the SHA-256 of its parent id and canonical rendering, so every
//! revision produces a fresh id and lineage cannot loop.

mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use store::{GuidelineStore, LineageEntry, StoreError};

pub const INTRODUCTION: &str = "Introduction";
const EXAMPLE_PREFIX: &str = "Example:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuidelineError {
    #[error("duplicate heading {heading:?} (section id {section_id:?})")]
    DuplicateHeading { heading: String, section_id: String },
    #[error("revision references unknown section {0:?}")]
    UnknownSection(String),
    #[error("revision has no edits")]
    EmptyRevision,
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_id: String,
    pub heading: String,
    pub body: String,
    pub examples: Vec<String>,
}

impl Section {
    fn new(heading: &str, body: &str) -> Self {
        let heading = heading.trim().to_string();
        Self {
            section_id: slugify(&heading),
            heading,
            body: normalize_body(body),
            examples: Vec::new(),
        }
    }
}

/// An immutable guideline version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuidelineDoc {
    version_id: String,
    parent_version: Option<String>,
    sections: Vec<Section>,
}

impl GuidelineDoc {
    fn build(sections: Vec<Section>, parent_version: Option<String>) -> Self {
        let text = render_sections(&sections);
        Self {
            version_id: version_id_for(parent_version.as_deref(), &text),
            parent_version,
            sections,
        }
    }

    /// Re-creates a version from its stored rendering and parent link.
    pub fn from_rendered(text: &str, parent_version: Option<String>) -> Result<Self, GuidelineError> {
        let root = parse_guideline(text)?;
        Ok(Self::build(root.sections, parent_version))
    }

    pub fn version_id(&self) -> &str {
        &self.version_id
    }

    /// First 12 hex digits of the version id.
    pub fn short_id(&self) -> &str {
        &self.version_id[..12]
    }

    pub fn parent_version(&self) -> Option<&str> {
        self.parent_version.as_deref()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, section_id: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.section_id == section_id)
    }

    pub fn section_ids(&self) -> Vec<&str> {
        self.sections.iter().map(|s| s.section_id.as_str()).collect()
    }

    pub fn render(&self) -> String {
        render_sections(&self.sections)
    }
}

pub fn version_id_for(parent: Option<&str>, rendered: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(parent.unwrap_or("").as_bytes());
    hasher.update(b"\n");
    hasher.update(rendered.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Lowercase ASCII alphanumerics joined by single hyphens.
pub fn slugify(heading: &str) -> String {
    let mut slug = String::new();
    for ch in heading.chars() {
        if ch.is_alphanumeric() {
            slug.extend(ch.to_lowercase());
        } else if !slug.is_empty() && !slug.ends_with('-') {
            slug.push('-');
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    if slug.is_empty() {
        slug.push_str("section");
    }
    slug
}

fn normalize_body(body: &str) -> String {
    let lines: Vec<&str> = body.lines().map(str::trim_end).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => String::new(),
    }
}

fn normalize_example(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn heading_text(line: &str) -> Option<&str> {
    let rest = line.strip_prefix('#')?;
    let text = rest.trim_start_matches('#').trim();
    (!text.is_empty()).then_some(text)
}

fn needs_escape(line: &str) -> bool {
    line.starts_with('#') || line.starts_with(EXAMPLE_PREFIX) || line.starts_with('\\')
}

/// Parses guideline source text into a root version (no parent).
pub fn parse_guideline(text: &str) -> Result<GuidelineDoc, GuidelineError> {
    struct Raw<'a> {
        heading: Option<&'a str>,
        body: Vec<&'a str>,
        examples: Vec<String>,
    }
    let mut raws = vec![Raw {
        heading: None,
        body: Vec::new(),
        examples: Vec::new(),
    }];
    for line in text.lines() {
        if let Some(h) = heading_text(line) {
            raws.push(Raw {
                heading: Some(h),
                body: Vec::new(),
                examples: Vec::new(),
            });
            continue;
        }
        let cur = raws.last_mut().expect("non-empty");
        if let Some(ex) = line.strip_prefix(EXAMPLE_PREFIX) {
            let ex = normalize_example(ex);
            if !ex.is_empty() {
                cur.examples.push(ex);
            }
        } else if let Some(escaped) = line.strip_prefix('\\') {
            cur.body.push(escaped);
        } else {
            cur.body.push(line);
        }
    }

    let preamble = raws.remove(0);
    let preamble_blank = preamble.examples.is_empty() && normalize_body(&preamble.body.join("\n")).is_empty();
    let mut sections = Vec::new();
    if !preamble_blank || raws.is_empty() {
        let mut s = Section::new(INTRODUCTION, &preamble.body.join("\n"));
        s.examples = preamble.examples;
        sections.push(s);
    }
    for raw in raws {
        let mut s = Section::new(raw.heading.expect("headed"), &raw.body.join("\n"));
        s.examples = raw.examples;
        sections.push(s);
    }

    let mut seen = BTreeSet::new();
    for s in &sections {
        if !seen.insert(s.section_id.clone()) {
            return Err(GuidelineError::DuplicateHeading {
                heading: s.heading.clone(),
                section_id: s.section_id.clone(),
            });
        }
    }
    Ok(GuidelineDoc::build(sections, None))
}

fn render_sections(sections: &[Section]) -> String {
    let blocks: Vec<String> = sections
        .iter()
        .map(|s| {
            let mut block = format!("# {}\n", s.heading);
            for line in s.body.lines().filter(|_| !s.body.is_empty()) {
                if needs_escape(line) {
                    block.push('\\');
                }
                block.push_str(line);
                block.push('\n');
            }
            for ex in &s.examples {
                block.push_str(EXAMPLE_PREFIX);
                block.push(' ');
                block.push_str(ex);
                block.push('\n');
            }
            block
        })
        .collect();
    blocks.join("\n")
}

pub fn render(doc: &GuidelineDoc) -> String {
    doc.render()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    Llm,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    ReplaceBody { section_id: String, body: String },
    AppendExample { section_id: String, text: String },
    AddSection { heading: String, body: String },
}

impl Edit {
    /// The section this edit touches (for `AddSection`, the id the new section gets).
    pub fn section_id(&self) -> String {
        match self {
            Edit::ReplaceBody { section_id, .. } | Edit::AppendExample { section_id, .. } => section_id.clone(),
            Edit::AddSection { heading, .. } => slugify(heading.trim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub edits: Vec<Edit>,
    #[serde(default)]
    pub rationale: String,
    pub author: Author,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_report: Option<String>,
}

impl Revision {
    pub fn touched_sections(&self) -> BTreeSet<String> {
        self.edits.iter().map(Edit::section_id).collect()
    }

    /// Checks the revision against `doc` without producing a new version.
    pub fn validate(&self, doc: &GuidelineDoc) -> Result<(), GuidelineError> {
        apply_revision(doc, self).map(|_| ())
    }
}

/// Applies `rev` to `doc`, yielding a child version. `doc` is left untouched.
pub fn apply_revision(doc: &GuidelineDoc, rev: &Revision) -> Result<GuidelineDoc, GuidelineError> {
    if rev.edits.is_empty() {
        return Err(GuidelineError::EmptyRevision);
    }
    let mut sections = doc.sections.clone();
    for edit in &rev.edits {
        match edit {
            Edit::ReplaceBody { section_id, body } => {
                let s = find_mut(&mut sections, section_id)?;
                s.body = normalize_body(body);
            }
            Edit::AppendExample { section_id, text } => {
                let text = normalize_example(text);
                if text.is_empty() {
                    return Err(GuidelineError::InvalidEdit(format!("empty example for section {section_id:?}")));
                }
                find_mut(&mut sections, section_id)?.examples.push(text);
            }
            Edit::AddSection { heading, body } => {
                if heading.trim().is_empty() || heading.contains('\n') {
                    return Err(GuidelineError::InvalidEdit(format!("bad section heading {heading:?}")));
                }
                let s = Section::new(heading, body);
                if sections.iter().any(|x| x.section_id == s.section_id) {
                    return Err(GuidelineError::DuplicateHeading {
                        heading: s.heading,
                        section_id: s.section_id,
                    });
                }
                sections.push(s);
            }
        }
    }
    Ok(GuidelineDoc::build(sections, Some(doc.version_id.clone())))
}

fn find_mut<'a>(sections: &'a mut [Section], id: &str) -> Result<&'a mut Section, GuidelineError> {
    sections
        .iter_mut()
        .find(|s| s.section_id == id)
        .ok_or_else(|| GuidelineError::UnknownSection(id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffEntry {
    Added { section_id: String, heading: String },
    Removed { section_id: String, heading: String },
    HeadingChanged { section_id: String, old: String, new: String },
    BodyChanged { section_id: String, old: String, new: String },
    ExamplesAdded { section_id: String, examples: Vec<String> },
    ExamplesChanged { section_id: String, old: Vec<String>, new: Vec<String> },
    /// Sections present in both versions appear in a different order.
    Reordered { old: Vec<String>, new: Vec<String> },
}

impl DiffEntry {
    pub fn section_id(&self) -> Option<&str> {
        match self {
            DiffEntry::Added { section_id, .. }
            | DiffEntry::Removed { section_id, .. }
            | DiffEntry::HeadingChanged { section_id, .. }
            | DiffEntry::BodyChanged { section_id, .. }
            | DiffEntry::ExamplesAdded { section_id, .. }
            | DiffEntry::ExamplesChanged { section_id, .. } => Some(section_id),
            DiffEntry::Reordered { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineDiff {
    pub entries: Vec<DiffEntry>,
}

impl GuidelineDiff {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn touched_sections(&self) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter_map(DiffEntry::section_id)
            .map(str::to_string)
            .collect()
    }
}

/// Section-level diff from `old` to `new`.
pub fn diff(old: &GuidelineDoc, new: &GuidelineDoc) -> GuidelineDiff {
    let old_by: BTreeMap<&str, &Section> = old.sections.iter().map(|s| (s.section_id.as_str(), s)).collect();
    let new_by: BTreeMap<&str, &Section> = new.sections.iter().map(|s| (s.section_id.as_str(), s)).collect();
    let mut entries = Vec::new();

    for s in &old.sections {
        if !new_by.contains_key(s.section_id.as_str()) {
            entries.push(DiffEntry::Removed {
                section_id: s.section_id.clone(),
                heading: s.heading.clone(),
            });
        }
    }
    for s in &new.sections {
        let Some(o) = old_by.get(s.section_id.as_str()) else {
            entries.push(DiffEntry::Added {
                section_id: s.section_id.clone(),
                heading: s.heading.clone(),
            });
            continue;
        };
        let id = s.section_id.clone();
        if o.heading != s.heading {
            entries.push(DiffEntry::HeadingChanged {
                section_id: id.clone(),
                old: o.heading.clone(),
                new: s.heading.clone(),
            });
        }
        if o.body != s.body {
            entries.push(DiffEntry::BodyChanged {
                section_id: id.clone(),
                old: o.body.clone(),
                new: s.body.clone(),
            });
        }
        if o.examples != s.examples {
            if s.examples.len() > o.examples.len() && s.examples.starts_with(&o.examples) {
                entries.push(DiffEntry::ExamplesAdded {
                    section_id: id,
                    examples: s.examples[o.examples.len()..].to_vec(),
                });
            } else {
                entries.push(DiffEntry::ExamplesChanged {
                    section_id: id,
                    old: o.examples.clone(),
                    new: s.examples.clone(),
                });
            }
        }
    }

    let common_old: Vec<String> = old
        .sections
        .iter()
        .filter(|s| new_by.contains_key(s.section_id.as_str()))
        .map(|s| s.section_id.clone())
        .collect();
    let common_new: Vec<String> = new
        .sections
        .iter()
        .filter(|s| old_by.contains_key(s.section_id.as_str()))
        .map(|s| s.section_id.clone())
        .collect();
    if common_old != common_new {
        entries.push(DiffEntry::Reordered {
            old: common_old,
            new: common_new,
        });
    }
    GuidelineDiff { entries }
}
