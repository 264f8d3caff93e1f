//! PubTator corpus ingestion.
//!
//! A document block looks like
//!
//! ```text
//! 10021369|t|Identification of APC2, a homologue of the adenomatous polyposis coli tumour suppressor.
//! 10021369|a|The adenomatous polyposis coli (APC) tumour-suppressor protein ...
//! 10021369	43	75	adenomatous polyposis coli tumour	Modifier	D011125
//! ```
//!
//! followed by a blank line. Offsets index into `title + " " + abstract`, counted
//! in Unicode scalar values.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(
        "line {line}: offset mismatch in document {doc_id}: [{start}, {end}) reads {found:?} but the annotation says {mention:?}"
    )]
    OffsetMismatch {
        doc_id: String,
        line: usize,
        start: usize,
        end: usize,
        mention: String,
        /// `None` when the span falls outside the document text.
        found: Option<String>,
    },
    #[error("line {line}: unknown category {label:?}")]
    UnknownCategory { line: usize, label: String },
    #[error("line {line}: duplicate document {doc_id}")]
    DuplicateDocument { doc_id: String, line: usize },
    #[error("annotation references unknown document {doc_id}")]
    UnknownDocument { doc_id: String },
    #[error("batch {offset} is out of range: {size} documents in batches of {batch_size}")]
    BatchOutOfRange {
        offset: usize,
        batch_size: usize,
        size: usize,
    },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
}

/// The four NCBI Disease annotation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    SpecificDisease,
    DiseaseClass,
    Modifier,
    CompositeMention,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::SpecificDisease,
        Category::DiseaseClass,
        Category::Modifier,
        Category::CompositeMention,
    ];

    /// The label used in PubTator files and in model output.
    pub fn label(self) -> &'static str {
        match self {
            Category::SpecificDisease => "SpecificDisease",
            Category::DiseaseClass => "DiseaseClass",
            Category::Modifier => "Modifier",
            Category::CompositeMention => "CompositeMention",
        }
    }

    /// Human-readable name, as used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::SpecificDisease => "Specific Disease",
            Category::DiseaseClass => "Disease Class",
            Category::Modifier => "Modifier",
            Category::CompositeMention => "Composite Mention",
        }
    }

    /// Lenient label lookup for model output: ignores case, spaces, underscores and hyphens.
    pub fn from_loose(label: &str) -> Option<Category> {
        let folded: String = label
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        Category::ALL
            .into_iter()
            .find(|c| c.label().to_lowercase() == folded)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Error returned by [`Category::from_str`]; carries the rejected label.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    /// Case-sensitive: only the four canonical spellings are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// `title + " " + abstract`; the frame all offsets refer to.
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        let title = title.into();
        let abstract_text = abstract_text.into();
        let text = format!("{title} {abstract_text}");
        Self {
            doc_id: doc_id.into(),
            title,
            abstract_text,
            text,
        }
    }

    /// Length of `text` in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// `text[start..end)` in scalar-value offsets, or `None` if out of range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        slice_chars(&self.text, start, end)
    }
}

/// Slice `text` by Unicode scalar offsets.
pub fn slice_chars(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let byte_at = |idx: usize| -> Option<usize> {
        if idx == 0 {
            return Some(0);
        }
        let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
        indices.nth(idx)
    };
    let b_start = byte_at(start)?;
    let b_end = byte_at(end)?;
    Some(&text[b_start..b_end])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub mention: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_id: Option<String>,
}

impl Annotation {
    pub fn new(
        doc_id: impl Into<String>,
        start: usize,
        end: usize,
        mention: impl Into<String>,
        category: Category,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            start,
            end,
            mention: mention.into(),
            category,
            concept_id: None,
        }
    }

    pub fn with_concept(mut self, concept_id: impl Into<String>) -> Self {
        self.concept_id = Some(concept_id.into());
        self
    }

    /// Sort key used for gold lists and serialization.
    pub fn sort_key(&self) -> (usize, usize, Category) {
        (self.start, self.end, self.category)
    }

    /// Checks `0 <= start < end <= len(text)` and `text[start..end) == mention`.
    pub fn check_against(&self, doc: &Document) -> Result<(), Option<String>> {
        if self.start >= self.end {
            return Err(None);
        }
        match doc.slice(self.start, self.end) {
            Some(s) if s == self.mention => Ok(()),
            Some(s) => Err(Some(s.to_string())),
            None => Err(None),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Every document has an entry, possibly empty.
    pub gold: BTreeMap<String, Vec<Annotation>>,
}

impl Corpus {
    /// Builds a corpus from already-constructed parts, enforcing every invariant the
    /// parser enforces. Annotation lists are sorted.
    pub fn from_parts(documents: Vec<Document>, annotations: Vec<Annotation>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut gold: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id.clone()) {
                return Err(CorpusError::DuplicateDocument {
                    doc_id: doc.doc_id.clone(),
                    line: 0,
                });
            }
            gold.insert(doc.doc_id.clone(), Vec::new());
        }
        let by_id: BTreeMap<&str, &Document> = documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        for ann in annotations {
            let doc = by_id
                .get(ann.doc_id.as_str())
                .ok_or_else(|| CorpusError::UnknownDocument {
                    doc_id: ann.doc_id.clone(),
                })?;
            if let Err(found) = ann.check_against(doc) {
                return Err(CorpusError::OffsetMismatch {
                    doc_id: ann.doc_id.clone(),
                    line: 0,
                    start: ann.start,
                    end: ann.end,
                    mention: ann.mention.clone(),
                    found,
                });
            }
            gold.get_mut(&ann.doc_id).expect("entry exists").push(ann);
        }
        for list in gold.values_mut() {
            list.sort_by_key(Annotation::sort_key);
        }
        Ok(Self { documents, gold })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn annotations(&self, doc_id: &str) -> &[Annotation] {
        self.gold.get(doc_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mention_count(&self) -> usize {
        self.gold.values().map(Vec::len).sum()
    }

    /// Concatenates corpora (e.g. train/dev/test splits). Document ids must stay unique.
    pub fn merge(mut self, other: Corpus) -> Result<Self, CorpusError> {
        for doc in other.documents {
            if self.gold.contains_key(&doc.doc_id) {
                return Err(CorpusError::DuplicateDocument {
                    doc_id: doc.doc_id,
                    line: 0,
                });
            }
            let anns = other.gold.get(&doc.doc_id).cloned().unwrap_or_default();
            self.gold.insert(doc.doc_id.clone(), anns);
            self.documents.push(doc);
        }
        Ok(self)
    }
}

struct PendingDoc {
    doc_id: String,
    title: String,
    abstract_text: Option<String>,
    annotations: Vec<Annotation>,
}

/// Parses PubTator text.
pub fn parse_pubtator(stream: &str) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut gold = BTreeMap::new();
    let mut pending: Option<PendingDoc> = None;

    let mut finish = |pending: &mut Option<PendingDoc>, line: usize| -> Result<(), CorpusError> {
        if let Some(p) = pending.take() {
            let abstract_text = p.abstract_text.ok_or_else(|| CorpusError::MalformedLine {
                line,
                reason: format!("document {} has a title but no abstract line", p.doc_id),
            })?;
            if gold.contains_key(&p.doc_id) {
                return Err(CorpusError::DuplicateDocument { doc_id: p.doc_id, line });
            }
            let mut anns = p.annotations;
            anns.sort_by_key(Annotation::sort_key);
            gold.insert(p.doc_id.clone(), anns);
            documents.push(Document::new(p.doc_id, p.title, abstract_text));
        }
        Ok(())
    };

    for (idx, raw) in stream.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(&mut pending, line_no)?;
            continue;
        }

        if let Some((doc_id, kind, content)) = split_text_line(line) {
            match kind {
                'a' => {
                    let p = pending.as_mut().filter(|p| p.doc_id == doc_id).ok_or_else(|| {
                        CorpusError::MalformedLine {
                            line: line_no,
                            reason: format!("abstract line for {doc_id} without a preceding title line"),
                        }
                    })?;
                    if p.abstract_text.is_some() {
                        return Err(CorpusError::MalformedLine {
                            line: line_no,
                            reason: format!("second abstract line for {doc_id}"),
                        });
                    }
                    p.abstract_text = Some(content.to_string());
                }
                _ => {
                    // A title line without a separating blank line still starts a new block.
                    finish(&mut pending, line_no)?;
                    pending = Some(PendingDoc {
                        doc_id: doc_id.to_string(),
                        title: content.to_string(),
                        abstract_text: None,
                        annotations: Vec::new(),
                    });
                }
            }
            continue;
        }

        let ann = parse_annotation_line(line, line_no)?;
        let p = pending.as_mut().ok_or_else(|| CorpusError::MalformedLine {
            line: line_no,
            reason: "annotation line outside a document block".into(),
        })?;
        if p.doc_id != ann.doc_id {
            return Err(CorpusError::MalformedLine {
                line: line_no,
                reason: format!("annotation for {} inside the block of {}", ann.doc_id, p.doc_id),
            });
        }
        let abstract_text = p.abstract_text.as_deref().ok_or_else(|| CorpusError::MalformedLine {
            line: line_no,
            reason: "annotation line before the abstract line".into(),
        })?;
        let doc = Document::new(p.doc_id.as_str(), p.title.as_str(), abstract_text);
        if let Err(found) = ann.check_against(&doc) {
            return Err(CorpusError::OffsetMismatch {
                doc_id: ann.doc_id,
                line: line_no,
                start: ann.start,
                end: ann.end,
                mention: ann.mention,
                found,
            });
        }
        p.annotations.push(ann);
    }
    let last = stream.split('\n').count();
    finish(&mut pending, last)?;

    Ok(Corpus { documents, gold })
}

/// Recognizes `PMID|t|...` and `PMID|a|...`.
fn split_text_line(line: &str) -> Option<(&str, char, &str)> {
    let bar = line.find('|')?;
    let (id, rest) = line.split_at(bar);
    if id.is_empty() || id.contains('\t') {
        return None;
    }
    let rest = &rest[1..];
    for kind in ['t', 'a'] {
        if let Some(content) = rest.strip_prefix(kind).and_then(|r| r.strip_prefix('|')) {
            return Some((id, kind, content));
        }
    }
    None
}

fn parse_annotation_line(line: &str, line_no: usize) -> Result<Annotation, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(5..=6).contains(&fields.len()) {
        return Err(CorpusError::MalformedLine {
            line: line_no,
            reason: format!("expected 5 or 6 tab-separated fields, found {}", fields.len()),
        });
    }
    let offset = |s: &str, what: &str| -> Result<usize, CorpusError> {
        s.trim().parse().map_err(|_| CorpusError::MalformedLine {
            line: line_no,
            reason: format!("bad {what} offset {s:?}"),
        })
    };
    let start = offset(fields[1], "start")?;
    let end = offset(fields[2], "end")?;
    let category = fields[4].parse().map_err(|UnknownCategory(label)| CorpusError::UnknownCategory {
        line: line_no,
        label,
    })?;
    let concept_id = fields
        .get(5)
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    if fields[0].is_empty() {
        return Err(CorpusError::MalformedLine {
            line: line_no,
            reason: "empty document id".into(),
        });
    }
    Ok(Annotation {
        doc_id: fields[0].to_string(),
        start,
        end,
        mention: fields[3].to_string(),
        category,
        concept_id,
    })
}

/// Canonical PubTator text: every block is terminated by a blank line and
/// annotations are emitted sorted by `(start, end, category)`.
pub fn serialize_pubtator(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        write_document(&mut out, doc, corpus.annotations(&doc.doc_id));
    }
    out
}

/// Serializes one document with an arbitrary annotation list (used for predictions).
pub fn write_document(out: &mut String, doc: &Document, annotations: &[Annotation]) {
    use std::fmt::Write;
    let _ = writeln!(out, "{}|t|{}", doc.doc_id, doc.title);
    let _ = writeln!(out, "{}|a|{}", doc.doc_id, doc.abstract_text);
    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by_key(|a| a.sort_key());
    for a in sorted {
        let _ = write!(out, "{}\t{}\t{}\t{}\t{}", doc.doc_id, a.start, a.end, a.mention, a.category);
        if let Some(cid) = &a.concept_id {
            let _ = write!(out, "\t{cid}");
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Number of batches of size `batch_size` covering `n` documents.
pub fn batch_count(n: usize, batch_size: usize) -> usize {
    if batch_size == 0 {
        0
    } else {
        n.div_ceil(batch_size)
    }
}

/// Seeded permutation of document indices shared by every batch of a run.
pub fn batch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Returns batch number `offset` of the seeded shuffle of `corpus` into batches of `k`.
pub fn sample_batch(corpus: &Corpus, k: usize, seed: u64, offset: usize) -> Result<Vec<&Document>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidBatchSize);
    }
    let size = corpus.len();
    if offset.checked_mul(k).is_none_or(|first| first >= size) {
        return Err(CorpusError::BatchOutOfRange {
            offset,
            batch_size: k,
            size,
        });
    }
    let order = batch_order(size, seed);
    let first = offset * k;
    let last = (first + k).min(size);
    Ok(order[first..last].iter().map(|&i| &corpus.documents[i]).collect())
}
