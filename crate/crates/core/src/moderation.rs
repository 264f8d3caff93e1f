//! Discrepancies between predicted and gold annotations, and the moderation report
//! built from them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{slice_chars, Annotation, Document};
use crate::guidelines::Revision;
use crate::metrics::{match_annotations, MatchMode, MetricsError};

/// Characters of context kept on each side of a discrepancy span.
pub const DEFAULT_CONTEXT_WINDOW: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiscrepancyKind {
    FalsePositive,
    FalseNegative,
    CategoryMismatch,
}

impl fmt::Display for DiscrepancyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscrepancyKind::FalsePositive => "FalsePositive",
            DiscrepancyKind::FalseNegative => "FalseNegative",
            DiscrepancyKind::CategoryMismatch => "CategoryMismatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub kind: DiscrepancyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Annotation>,
    pub doc_id: String,
    pub context: String,
}

impl Discrepancy {
    /// Character span covered by the discrepancy (union for mismatches).
    pub fn span(&self) -> (usize, usize) {
        let spans = self.predicted.iter().chain(&self.gold).map(|a| (a.start, a.end));
        spans.fold((usize::MAX, 0), |(s, e), (a, b)| (s.min(a), e.max(b)))
    }
}

/// Text around `[start, end)` with up to `window` characters on each side.
pub fn context_window(doc: &Document, start: usize, end: usize, window: usize) -> String {
    let len = doc.char_len();
    let from = start.saturating_sub(window);
    let to = end.saturating_add(window).min(len);
    slice_chars(&doc.text, from, to).unwrap_or_default().to_string()
}

/// Lists the false positives, false negatives and category mismatches of one
/// document under `mode`, ordered by span start.
pub fn extract_discrepancies(
    doc: &Document,
    pred: &[Annotation],
    gold: &[Annotation],
    mode: MatchMode,
    window: usize,
) -> Result<Vec<Discrepancy>, MetricsError> {
    let result = match_annotations(pred, gold, mode)?;
    let make = |kind, predicted: Option<Annotation>, gold: Option<Annotation>| {
        let mut d = Discrepancy {
            kind,
            predicted,
            gold,
            doc_id: doc.doc_id.clone(),
            context: String::new(),
        };
        let (s, e) = d.span();
        d.context = context_window(doc, s, e, window);
        d
    };
    let mut out: Vec<Discrepancy> = result
        .false_positives
        .into_iter()
        .map(|p| make(DiscrepancyKind::FalsePositive, Some(p), None))
        .chain(
            result
                .false_negatives
                .into_iter()
                .map(|g| make(DiscrepancyKind::FalseNegative, None, Some(g))),
        )
        .chain(
            result
                .category_mismatches
                .into_iter()
                .map(|(p, g)| make(DiscrepancyKind::CategoryMismatch, Some(p), Some(g))),
        )
        .collect();
    out.sort_by_key(|d| (d.span(), d.kind));
    Ok(out)
}

/// Influencing factors behind annotator errors, plus `Unclassified` for anything
/// the moderator could not place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InfluencingFactor {
    #[serde(rename = "Ambiguous Abbreviations and Acronyms")]
    AmbiguousAbbreviations,
    #[serde(rename = "Generic or Vague Descriptors")]
    GenericDescriptors,
    #[serde(rename = "Chromosomal and Genomic Anomaly Terms")]
    GenomicAnomalyTerms,
    #[serde(rename = "Descriptive or Phenotypic Features")]
    PhenotypicFeatures,
    #[serde(rename = "Incomplete or Non-Specific Genetic/Pathological Descriptions")]
    NonSpecificDescriptions,
    #[serde(rename = "Miscellaneous or Low-Frequency Terms")]
    LowFrequencyTerms,
    #[serde(rename = "unclassified")]
    Unclassified,
}

impl InfluencingFactor {
    /// The six named classes, without `Unclassified`.
    pub const CLASSES: [InfluencingFactor; 6] = [
        InfluencingFactor::AmbiguousAbbreviations,
        InfluencingFactor::GenericDescriptors,
        InfluencingFactor::GenomicAnomalyTerms,
        InfluencingFactor::PhenotypicFeatures,
        InfluencingFactor::NonSpecificDescriptions,
        InfluencingFactor::LowFrequencyTerms,
    ];

    pub const ALL: [InfluencingFactor; 7] = [
        InfluencingFactor::AmbiguousAbbreviations,
        InfluencingFactor::GenericDescriptors,
        InfluencingFactor::GenomicAnomalyTerms,
        InfluencingFactor::PhenotypicFeatures,
        InfluencingFactor::NonSpecificDescriptions,
        InfluencingFactor::LowFrequencyTerms,
        InfluencingFactor::Unclassified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InfluencingFactor::AmbiguousAbbreviations => "Ambiguous Abbreviations and Acronyms",
            InfluencingFactor::GenericDescriptors => "Generic or Vague Descriptors",
            InfluencingFactor::GenomicAnomalyTerms => "Chromosomal and Genomic Anomaly Terms",
            InfluencingFactor::PhenotypicFeatures => "Descriptive or Phenotypic Features",
            InfluencingFactor::NonSpecificDescriptions => {
                "Incomplete or Non-Specific Genetic/Pathological Descriptions"
            }
            InfluencingFactor::LowFrequencyTerms => "Miscellaneous or Low-Frequency Terms",
            InfluencingFactor::Unclassified => "unclassified",
        }
    }

    /// A one-line gloss shown to the moderator model.
    pub fn gloss(self) -> &'static str {
        match self {
            InfluencingFactor::AmbiguousAbbreviations => {
                "short forms that can stand for several things, including casing or punctuation variants"
            }
            InfluencingFactor::GenericDescriptors => "broad words for a disease concept, such as tumor",
            InfluencingFactor::GenomicAnomalyTerms => "genetic or chromosomal phenomena tied to a disease",
            InfluencingFactor::PhenotypicFeatures => "clinical signs or phenotype descriptions",
            InfluencingFactor::NonSpecificDescriptions => {
                "phrases that point at an abnormality without naming a disease"
            }
            InfluencingFactor::LowFrequencyTerms => "rare terms, syndrome components or fragments",
            InfluencingFactor::Unclassified => "none of the above",
        }
    }

    /// Matches a factor name ignoring case and surrounding whitespace; anything else
    /// is `Unclassified`.
    pub fn from_name(name: &str) -> InfluencingFactor {
        let name = name.trim();
        InfluencingFactor::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
            .unwrap_or(InfluencingFactor::Unclassified)
    }
}

impl fmt::Display for InfluencingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportItem {
    pub discrepancy: Discrepancy,
    pub cause: String,
    pub factor: InfluencingFactor,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationReport {
    pub items: Vec<ReportItem>,
    pub proposed_revision: Revision,
    /// Prompt digests of the gateway exchanges that produced this report.
    #[serde(default)]
    pub exchanges: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("report has no items")]
    EmptyReport,
}

/// Share of items per factor, over all seven factor values. Shares sum to 1.
pub fn factor_distribution(items: &[ReportItem]) -> Result<BTreeMap<InfluencingFactor, f64>, ReportError> {
    if items.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let mut counts: BTreeMap<InfluencingFactor, usize> = InfluencingFactor::ALL.into_iter().map(|f| (f, 0)).collect();
    for item in items {
        *counts.entry(item.factor).or_default() += 1;
    }
    let total = items.len() as f64;
    Ok(counts.into_iter().map(|(f, n)| (f, n as f64 / total)).collect())
}

pub fn classify_report_factors(report: &ModerationReport) -> Result<BTreeMap<InfluencingFactor, f64>, ReportError> {
    factor_distribution(&report.items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use crate::guidelines::Author;

    fn doc() -> Document {
        Document::new("9", "Wilson disease and APC.", "Patients with tumours.")
    }

    fn ann(start: usize, end: usize, category: Category) -> Annotation {
        let d = doc();
        Annotation::new("9", start, end, d.slice(start, end).unwrap(), category)
    }

    #[test]
    fn identical_sets_have_no_discrepancies() {
        let a = vec![ann(0, 14, Category::SpecificDisease), ann(19, 22, Category::Modifier)];
        let d = extract_discrepancies(&doc(), &a, &a, MatchMode::STRICT, 120).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn category_swap_is_one_mismatch() {
        let pred = vec![ann(19, 22, Category::SpecificDisease)];
        let gold = vec![ann(19, 22, Category::Modifier)];
        let d = extract_discrepancies(&doc(), &pred, &gold, MatchMode::STRICT, 120).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiscrepancyKind::CategoryMismatch);
        assert!(d[0].predicted.is_some() && d[0].gold.is_some());
    }

    #[test]
    fn disjoint_spans_are_fp_and_fn_in_offset_order() {
        let pred = vec![ann(38, 45, Category::DiseaseClass)];
        let gold = vec![ann(0, 14, Category::SpecificDisease)];
        let d = extract_discrepancies(&doc(), &pred, &gold, MatchMode::STRICT, 120).unwrap();
        let kinds: Vec<_> = d.iter().map(|x| x.kind).collect();
        assert_eq!(kinds, [DiscrepancyKind::FalseNegative, DiscrepancyKind::FalsePositive]);
        assert!(d[0].predicted.is_none() && d[1].gold.is_none());
    }

    #[test]
    fn context_is_clamped_to_window() {
        let d = doc();
        assert_eq!(context_window(&d, 19, 22, 4), "and APC. Pa");
        assert_eq!(context_window(&d, 0, 6, 2), "Wilson d");
        assert_eq!(context_window(&d, 0, 6, 1000), d.text);
    }

    fn item(factor: InfluencingFactor) -> ReportItem {
        ReportItem {
            discrepancy: Discrepancy {
                kind: DiscrepancyKind::FalseNegative,
                predicted: None,
                gold: Some(ann(0, 14, Category::SpecificDisease)),
                doc_id: "9".into(),
                context: String::new(),
            },
            cause: String::new(),
            factor,
            solution: String::new(),
        }
    }

    fn report(items: Vec<ReportItem>) -> ModerationReport {
        ModerationReport {
            items,
            proposed_revision: Revision {
                edits: vec![],
                rationale: String::new(),
                author: Author::Llm,
                source_report: None,
            },
            exchanges: vec![],
        }
    }

    #[test]
    fn factor_shares() {
        use InfluencingFactor::*;
        let one = classify_report_factors(&report(vec![item(GenericDescriptors)])).unwrap();
        assert_eq!(one[&GenericDescriptors], 1.0);
        assert_eq!(one.len(), 7);

        let r = report(vec![
            item(AmbiguousAbbreviations),
            item(AmbiguousAbbreviations),
            item(Unclassified),
        ]);
        let dist = classify_report_factors(&r).unwrap();
        assert_eq!(dist[&AmbiguousAbbreviations], 2.0 / 3.0);
        assert_eq!(dist[&Unclassified], 1.0 / 3.0);
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-9);

        assert_eq!(classify_report_factors(&report(vec![])), Err(ReportError::EmptyReport));
    }

    #[test]
    fn factor_names_round_trip() {
        for f in InfluencingFactor::ALL {
            assert_eq!(InfluencingFactor::from_name(f.name()), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert_eq!(
            InfluencingFactor::from_name("generic or vague descriptors"),
            InfluencingFactor::GenericDescriptors
        );
        assert_eq!(InfluencingFactor::from_name("Spelling"), InfluencingFactor::Unclassified);
    }
}
