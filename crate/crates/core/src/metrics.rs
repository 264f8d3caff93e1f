//! Span matching under the four evaluation criteria and precision/recall/F1.
//!
//! A prediction and a gold annotation are *compatible* under a [`MatchMode`] when
//! their spans pass the boundary test (identical offsets for [`Boundary::Strict`],
//! at least one shared character for [`Boundary::Soft`]) and, in category-aware
//! modes, their categories are equal. Scores always come from a maximum-cardinality
//! one-to-one matching over the compatibility graph, so they do not depend on the
//! order annotations are listed in.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Annotation, Category, Corpus};
use crate::matching::maximum_matching;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("annotations from different documents in one comparison: {0} and {1}")]
    MixedDocuments(String, String),
    #[error("cannot average an empty batch")]
    EmptyBatch,
    #[error("predictions reference document {0}, which is not in the gold corpus")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Strict,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchMode {
    pub boundary: Boundary,
    pub category_aware: bool,
}

impl Default for MatchMode {
    fn default() -> Self {
        Self::STRICT
    }
}

impl MatchMode {
    pub const STRICT: MatchMode = MatchMode {
        boundary: Boundary::Strict,
        category_aware: true,
    };
    pub const STRICT_ANY_CATEGORY: MatchMode = MatchMode {
        boundary: Boundary::Strict,
        category_aware: false,
    };
    pub const SOFT: MatchMode = MatchMode {
        boundary: Boundary::Soft,
        category_aware: true,
    };
    pub const SOFT_ANY_CATEGORY: MatchMode = MatchMode {
        boundary: Boundary::Soft,
        category_aware: false,
    };

    /// Report column order.
    pub const ALL: [MatchMode; 4] = [
        Self::STRICT,
        Self::STRICT_ANY_CATEGORY,
        Self::SOFT,
        Self::SOFT_ANY_CATEGORY,
    ];

    pub fn label(self) -> &'static str {
        match (self.boundary, self.category_aware) {
            (Boundary::Strict, true) => "Strict Match",
            (Boundary::Strict, false) => "Strict Match (w/o Category)",
            (Boundary::Soft, true) => "Soft Match",
            (Boundary::Soft, false) => "Soft Match (w/o Category)",
        }
    }

    /// Short machine key, used in CSV headers and JSON.
    pub fn key(self) -> &'static str {
        match (self.boundary, self.category_aware) {
            (Boundary::Strict, true) => "strict",
            (Boundary::Strict, false) => "strict_any_category",
            (Boundary::Soft, true) => "soft",
            (Boundary::Soft, false) => "soft_any_category",
        }
    }

    pub fn without_category(self) -> MatchMode {
        MatchMode {
            category_aware: false,
            ..self
        }
    }

    pub fn spans_compatible(self, a: &Annotation, b: &Annotation) -> bool {
        match self.boundary {
            Boundary::Strict => a.start == b.start && a.end == b.end,
            Boundary::Soft => a.start < b.end && b.start < a.end,
        }
    }

    pub fn compatible(self, a: &Annotation, b: &Annotation) -> bool {
        self.spans_compatible(a, b) && (!self.category_aware || a.category == b.category)
    }
}

/// One value per match mode, in report order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByMode<T> {
    pub strict: T,
    pub strict_any_category: T,
    pub soft: T,
    pub soft_any_category: T,
}

impl<T> ByMode<T> {
    pub fn from_fn(mut f: impl FnMut(MatchMode) -> T) -> Self {
        Self {
            strict: f(MatchMode::STRICT),
            strict_any_category: f(MatchMode::STRICT_ANY_CATEGORY),
            soft: f(MatchMode::SOFT),
            soft_any_category: f(MatchMode::SOFT_ANY_CATEGORY),
        }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(MatchMode) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self {
            strict: f(MatchMode::STRICT)?,
            strict_any_category: f(MatchMode::STRICT_ANY_CATEGORY)?,
            soft: f(MatchMode::SOFT)?,
            soft_any_category: f(MatchMode::SOFT_ANY_CATEGORY)?,
        })
    }

    pub fn get(&self, mode: MatchMode) -> &T {
        match (mode.boundary, mode.category_aware) {
            (Boundary::Strict, true) => &self.strict,
            (Boundary::Strict, false) => &self.strict_any_category,
            (Boundary::Soft, true) => &self.soft,
            (Boundary::Soft, false) => &self.soft_any_category,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ByMode<U> {
        ByMode::from_fn(|mode| f(self.get(mode)))
    }
}

/// One value per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByCategory<T> {
    pub specific_disease: T,
    pub disease_class: T,
    pub modifier: T,
    pub composite_mention: T,
}

impl<T> ByCategory<T> {
    pub fn from_fn(mut f: impl FnMut(Category) -> T) -> Self {
        Self {
            specific_disease: f(Category::SpecificDisease),
            disease_class: f(Category::DiseaseClass),
            modifier: f(Category::Modifier),
            composite_mention: f(Category::CompositeMention),
        }
    }

    pub fn get(&self, category: Category) -> &T {
        match category {
            Category::SpecificDisease => &self.specific_disease,
            Category::DiseaseClass => &self.disease_class,
            Category::Modifier => &self.modifier,
            Category::CompositeMention => &self.composite_mention,
        }
    }

    pub fn get_mut(&mut self, category: Category) -> &mut T {
        match category {
            Category::SpecificDisease => &mut self.specific_disease,
            Category::DiseaseClass => &mut self.disease_class,
            Category::Modifier => &mut self.modifier,
            Category::CompositeMention => &mut self.composite_mention,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ByCategory<U> {
        ByCategory::from_fn(|c| f(self.get(c)))
    }
}

/// Additive match counts. For a one-to-one matching `matched_pred == matched_gold`;
/// the two differ only for per-category rows without category matching, where the
/// precision and recall sides are attributed by different labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched_pred: usize,
    pub n_pred: usize,
    pub matched_gold: usize,
    pub n_gold: usize,
}

impl Counts {
    pub fn symmetric(matched: usize, n_pred: usize, n_gold: usize) -> Self {
        Self {
            matched_pred: matched,
            n_pred,
            matched_gold: matched,
            n_gold,
        }
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(*self)
    }
}

impl Add for Counts {
    type Output = Counts;
    fn add(self, rhs: Counts) -> Counts {
        Counts {
            matched_pred: self.matched_pred + rhs.matched_pred,
            n_pred: self.n_pred + rhs.n_pred,
            matched_gold: self.matched_gold + rhs.matched_gold,
            n_gold: self.n_gold + rhs.n_gold,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

/// Precision, recall and F1 together with the counts they were computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_pred: usize,
    pub n_pred: usize,
    pub matched_gold: usize,
    pub n_gold: usize,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Prf {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.matched_pred, c.n_pred);
        let recall = ratio(c.matched_gold, c.n_gold);
        let f1 = if c.matched_pred == c.matched_gold {
            ratio(2 * c.matched_pred, c.n_pred + c.n_gold)
        } else if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            matched_pred: c.matched_pred,
            n_pred: c.n_pred,
            matched_gold: c.matched_gold,
            n_gold: c.n_gold,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            matched_pred: self.matched_pred,
            n_pred: self.n_pred,
            matched_gold: self.matched_gold,
            n_gold: self.n_gold,
        }
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<(Annotation, Annotation)>,
    pub false_positives: Vec<Annotation>,
    pub false_negatives: Vec<Annotation>,
    /// Span-compatible pairs whose categories differ; only filled in category-aware modes.
    pub category_mismatches: Vec<(Annotation, Annotation)>,
}

impl MatchResult {
    pub fn n_pred(&self) -> usize {
        self.pairs.len() + self.false_positives.len() + self.category_mismatches.len()
    }

    pub fn n_gold(&self) -> usize {
        self.pairs.len() + self.false_negatives.len() + self.category_mismatches.len()
    }
}

fn check_single_document(pred: &[Annotation], gold: &[Annotation]) -> Result<(), MetricsError> {
    let mut ids = pred.iter().chain(gold).map(|a| a.doc_id.as_str());
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|id| *id != first) {
            return Err(MetricsError::MixedDocuments(first.to_string(), other.to_string()));
        }
    }
    Ok(())
}

fn sorted_indices(anns: &[&Annotation]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..anns.len()).collect();
    idx.sort_by_key(|&i| anns[i].sort_key());
    idx
}

/// Maximum matching between `pred` and `gold` under `compatible`. Returns
/// `(pred_index, gold_index)` pairs into the given slices. Inputs are visited in
/// `(start, end, category)` order so the chosen pairing is independent of input order
/// up to exact duplicates.
fn match_indices(
    pred: &[&Annotation],
    gold: &[&Annotation],
    compatible: impl Fn(&Annotation, &Annotation) -> bool,
) -> Vec<(usize, usize)> {
    let p_order = sorted_indices(pred);
    let g_order = sorted_indices(gold);
    let adj: Vec<Vec<usize>> = p_order
        .iter()
        .map(|&p| {
            g_order
                .iter()
                .enumerate()
                .filter(|(_, &g)| compatible(pred[p], gold[g]))
                .map(|(gi, _)| gi)
                .collect()
        })
        .collect();
    maximum_matching(p_order.len(), g_order.len(), &adj)
        .into_iter()
        .enumerate()
        .filter_map(|(pi, gi)| gi.map(|gi| (p_order[pi], g_order[gi])))
        .collect()
}

/// Size of a maximum matching under `mode`.
pub fn matched_count(pred: &[Annotation], gold: &[Annotation], mode: MatchMode) -> usize {
    let p: Vec<&Annotation> = pred.iter().collect();
    let g: Vec<&Annotation> = gold.iter().collect();
    match_indices(&p, &g, |a, b| mode.compatible(a, b)).len()
}

/// Pairs predictions with gold annotations of one document under `mode`.
pub fn match_annotations(pred: &[Annotation], gold: &[Annotation], mode: MatchMode) -> Result<MatchResult, MetricsError> {
    check_single_document(pred, gold)?;
    let p: Vec<&Annotation> = pred.iter().collect();
    let g: Vec<&Annotation> = gold.iter().collect();
    let primary = match_indices(&p, &g, |a, b| mode.compatible(a, b));

    let mut pred_used = vec![false; p.len()];
    let mut gold_used = vec![false; g.len()];
    for &(pi, gi) in &primary {
        pred_used[pi] = true;
        gold_used[gi] = true;
    }

    let mut mismatches = Vec::new();
    if mode.category_aware {
        let rest_p: Vec<usize> = (0..p.len()).filter(|&i| !pred_used[i]).collect();
        let rest_g: Vec<usize> = (0..g.len()).filter(|&i| !gold_used[i]).collect();
        let rp: Vec<&Annotation> = rest_p.iter().map(|&i| p[i]).collect();
        let rg: Vec<&Annotation> = rest_g.iter().map(|&i| g[i]).collect();
        for (a, b) in match_indices(&rp, &rg, |a, b| mode.spans_compatible(a, b)) {
            pred_used[rest_p[a]] = true;
            gold_used[rest_g[b]] = true;
            mismatches.push((rest_p[a], rest_g[b]));
        }
    }

    let to_pairs = |mut idx: Vec<(usize, usize)>| -> Vec<(Annotation, Annotation)> {
        idx.sort_by_key(|&(pi, gi)| (p[pi].sort_key(), g[gi].sort_key()));
        idx.into_iter().map(|(pi, gi)| (p[pi].clone(), g[gi].clone())).collect()
    };
    let leftovers = |anns: &[&Annotation], used: &[bool]| -> Vec<Annotation> {
        let mut out: Vec<Annotation> = anns
            .iter()
            .zip(used)
            .filter(|(_, &u)| !u)
            .map(|(a, _)| (*a).clone())
            .collect();
        out.sort_by_key(Annotation::sort_key);
        out
    };

    Ok(MatchResult {
        false_positives: leftovers(&p, &pred_used),
        false_negatives: leftovers(&g, &gold_used),
        pairs: to_pairs(primary),
        category_mismatches: to_pairs(mismatches),
    })
}

/// Scores a match result. Category mismatches count as unmatched on both sides.
pub fn score(result: &MatchResult) -> Prf {
    Counts::symmetric(result.pairs.len(), result.n_pred(), result.n_gold()).prf()
}

/// Per-category counts. Predictions labelled `c` form the precision side and gold
/// labelled `c` the recall side; both are attributed from one maximum matching over
/// the full sets, which in category-aware modes decomposes per category.
pub fn per_category_counts(
    pred: &[Annotation],
    gold: &[Annotation],
    mode: MatchMode,
) -> Result<ByCategory<Counts>, MetricsError> {
    check_single_document(pred, gold)?;
    let p: Vec<&Annotation> = pred.iter().collect();
    let g: Vec<&Annotation> = gold.iter().collect();
    let pairs = match_indices(&p, &g, |a, b| mode.compatible(a, b));

    let mut counts = ByCategory::<Counts>::default();
    for a in pred {
        counts.get_mut(a.category).n_pred += 1;
    }
    for a in gold {
        counts.get_mut(a.category).n_gold += 1;
    }
    for (pi, gi) in pairs {
        counts.get_mut(p[pi].category).matched_pred += 1;
        counts.get_mut(g[gi].category).matched_gold += 1;
    }
    Ok(counts)
}

pub fn per_category_scores(
    pred: &[Annotation],
    gold: &[Annotation],
    mode: MatchMode,
) -> Result<ByCategory<Prf>, MetricsError> {
    Ok(per_category_counts(pred, gold, mode)?.map(Counts::prf))
}

/// Macro mean of per-document F1.
pub fn mean_document_f1(per_doc: &[Prf]) -> Result<f64, MetricsError> {
    if per_doc.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    Ok(per_doc.iter().map(|p| p.f1).sum::<f64>() / per_doc.len() as f64)
}

/// How per-document scores are combined into a single gate value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-document F1.
    #[default]
    Macro,
    /// F1 of summed counts.
    Micro,
}

pub fn aggregate_f1(per_doc: &[Prf], aggregation: Aggregation) -> Result<f64, MetricsError> {
    match aggregation {
        Aggregation::Macro => mean_document_f1(per_doc),
        Aggregation::Micro if per_doc.is_empty() => Err(MetricsError::EmptyBatch),
        Aggregation::Micro => Ok(per_doc.iter().map(Prf::counts).sum::<Counts>().prf().f1),
    }
}

/// Rounds half away from zero at `decimals` places, absorbing binary representation
/// error so that e.g. 0.125 rounds to 0.13.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudged = scaled + scaled.signum() * 1e-9;
    (nudged.abs() + 0.5).floor().copysign(x) / scale
}

/// Two-decimal rendering used in every report table.
pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round_half_up(x, 2))
}

/// Scores for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEvaluation {
    pub doc_id: String,
    pub by_mode: ByMode<Counts>,
    pub by_category: ByMode<ByCategory<Counts>>,
}

impl DocumentEvaluation {
    pub fn compute(doc_id: &str, pred: &[Annotation], gold: &[Annotation]) -> Result<Self, MetricsError> {
        if let Some(stray) = pred.iter().chain(gold).find(|a| a.doc_id != doc_id) {
            return Err(MetricsError::MixedDocuments(doc_id.to_string(), stray.doc_id.clone()));
        }
        Ok(Self {
            doc_id: doc_id.to_string(),
            by_mode: ByMode::try_from_fn(|mode| {
                match_annotations(pred, gold, mode).map(|r| score(&r).counts())
            })?,
            by_category: ByMode::try_from_fn(|mode| per_category_counts(pred, gold, mode))?,
        })
    }

    pub fn prf(&self) -> ByMode<Prf> {
        self.by_mode.map(Counts::prf)
    }
}

/// Corpus-level evaluation. Tables use micro aggregation over documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub documents: Vec<DocumentEvaluation>,
    pub overall: ByMode<Prf>,
    pub per_category: ByCategory<ByMode<Prf>>,
}

impl Evaluation {
    pub fn from_documents(documents: Vec<DocumentEvaluation>) -> Self {
        let overall = ByMode::from_fn(|mode| documents.iter().map(|d| *d.by_mode.get(mode)).sum::<Counts>().prf());
        let per_category = ByCategory::from_fn(|cat| {
            ByMode::from_fn(|mode| {
                documents
                    .iter()
                    .map(|d| *d.by_category.get(mode).get(cat))
                    .sum::<Counts>()
                    .prf()
            })
        });
        Self {
            documents,
            overall,
            per_category,
        }
    }
}

/// `(doc_id, predictions, gold)` for one document.
type DocumentInput<'a> = (&'a str, &'a [Annotation], &'a [Annotation]);

fn evaluation_inputs<'a>(
    gold: &'a Corpus,
    predictions: &'a BTreeMap<String, Vec<Annotation>>,
) -> Result<Vec<DocumentInput<'a>>, MetricsError> {
    if let Some(unknown) = predictions.keys().find(|id| !gold.gold.contains_key(*id)) {
        return Err(MetricsError::UnknownDocument(unknown.clone()));
    }
    Ok(gold
        .documents
        .iter()
        .map(|d| {
            let pred = predictions.get(&d.doc_id).map(Vec::as_slice).unwrap_or(&[]);
            (d.doc_id.as_str(), pred, gold.annotations(&d.doc_id))
        })
        .collect())
}

/// Evaluates predictions against every document of `gold`, one document at a time.
/// Documents without an entry in `predictions` count as having no predictions.
pub fn evaluate_sequential(gold: &Corpus, predictions: &BTreeMap<String, Vec<Annotation>>) -> Result<Evaluation, MetricsError> {
    let docs = evaluation_inputs(gold, predictions)?
        .into_iter()
        .map(|(id, p, g)| DocumentEvaluation::compute(id, p, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Evaluation::from_documents(docs))
}

/// Same as [`evaluate_sequential`], with documents scored on the rayon pool.
#[cfg(feature = "parallel")]
pub fn evaluate_parallel(gold: &Corpus, predictions: &BTreeMap<String, Vec<Annotation>>) -> Result<Evaluation, MetricsError> {
    use rayon::prelude::*;
    let docs = evaluation_inputs(gold, predictions)?
        .into_par_iter()
        .map(|(id, p, g)| DocumentEvaluation::compute(id, p, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Evaluation::from_documents(docs))
}

/// Evaluates with the parallel path when the `parallel` feature is on.
pub fn evaluate(gold: &Corpus, predictions: &BTreeMap<String, Vec<Annotation>>) -> Result<Evaluation, MetricsError> {
    #[cfg(feature = "parallel")]
    {
        evaluate_parallel(gold, predictions)
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_sequential(gold, predictions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category::*;

    fn ann(start: usize, end: usize, category: Category) -> Annotation {
        Annotation::new("d", start, end, "x".repeat(end - start), category)
    }

    #[test]
    fn identity_pairs_under_every_mode() {
        let a = vec![ann(0, 5, SpecificDisease)];
        for mode in MatchMode::ALL {
            let r = match_annotations(&a, &a, mode).unwrap();
            assert_eq!(r.pairs.len(), 1);
            assert!(r.false_positives.is_empty() && r.false_negatives.is_empty());
            assert!(r.category_mismatches.is_empty());
        }
    }

    #[test]
    fn shifted_span_with_other_category() {
        let pred = vec![ann(2, 7, DiseaseClass)];
        let gold = vec![ann(0, 5, SpecificDisease)];
        let strict = match_annotations(&pred, &gold, MatchMode::STRICT).unwrap();
        assert_eq!(
            (strict.pairs.len(), strict.false_positives.len(), strict.false_negatives.len()),
            (0, 1, 1)
        );
        let soft = match_annotations(&pred, &gold, MatchMode::SOFT_ANY_CATEGORY).unwrap();
        assert_eq!(soft.pairs.len(), 1);
        // Soft but category-aware: overlapping spans, different categories.
        let soft_cat = match_annotations(&pred, &gold, MatchMode::SOFT).unwrap();
        assert_eq!(soft_cat.category_mismatches.len(), 1);
        assert_eq!(score(&soft_cat).f1, 0.0);
    }

    #[test]
    fn one_prediction_overlapping_two_golds() {
        let gold = vec![ann(0, 10, Modifier), ann(5, 15, Modifier)];
        let pred = vec![ann(8, 12, Modifier)];
        let r = match_annotations(&pred, &gold, MatchMode::SOFT).unwrap();
        assert_eq!((r.pairs.len(), r.false_negatives.len(), r.false_positives.len()), (1, 1, 0));
    }

    #[test]
    fn category_mismatch_is_carved_out() {
        let pred = vec![ann(0, 5, SpecificDisease)];
        let gold = vec![ann(0, 5, Modifier)];
        let r = match_annotations(&pred, &gold, MatchMode::STRICT).unwrap();
        assert_eq!(r.category_mismatches.len(), 1);
        assert!(r.false_positives.is_empty() && r.false_negatives.is_empty());
        assert_eq!(r.n_pred(), 1);
        assert_eq!(r.n_gold(), 1);
        // Without category the same pair simply matches and nothing is a mismatch.
        let r = match_annotations(&pred, &gold, MatchMode::STRICT_ANY_CATEGORY).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert!(r.category_mismatches.is_empty());
    }

    #[test]
    fn mixed_documents_rejected() {
        let pred = vec![Annotation::new("a", 0, 1, "x", Modifier)];
        let gold = vec![Annotation::new("b", 0, 1, "x", Modifier)];
        assert!(matches!(
            match_annotations(&pred, &gold, MatchMode::STRICT),
            Err(MetricsError::MixedDocuments(..))
        ));
    }

    #[test]
    fn score_arithmetic() {
        let zero = Counts::symmetric(0, 0, 0).prf();
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
        let p = Counts::symmetric(1, 1, 2).prf();
        assert_eq!(p.precision, 1.0);
        assert_eq!(p.recall, 0.5);
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_row_renders() {
        assert_eq!(fmt2(harmonic_f1(0.38, 0.35)), "0.36");
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(fmt2(0.125), "0.13");
        assert_eq!(fmt2(0.135), "0.14");
        assert_eq!(fmt2(0.005), "0.01");
        assert_eq!(fmt2(0.004999), "0.00");
        assert_eq!(fmt2(1.0), "1.00");
        assert_eq!(fmt2(2.0 / 3.0), "0.67");
    }

    #[test]
    fn per_category_empty() {
        let s = per_category_scores(&[], &[], MatchMode::STRICT).unwrap();
        for c in Category::ALL {
            assert_eq!(*s.get(c), Prf::default());
        }
    }

    #[test]
    fn per_category_modifier_row() {
        let gold = vec![ann(0, 5, Modifier)];
        let pred = vec![ann(0, 5, SpecificDisease)];
        let aware = per_category_scores(&pred, &gold, MatchMode::STRICT).unwrap();
        assert_eq!(aware.modifier.recall, 0.0);
        let blind = per_category_scores(&pred, &gold, MatchMode::STRICT_ANY_CATEGORY).unwrap();
        assert_eq!(blind.modifier.recall, 1.0);
        // The prediction was labelled SpecificDisease, so that row carries its precision.
        assert_eq!(blind.specific_disease.precision, 1.0);
        assert_eq!(blind.modifier.n_pred, 0);
    }

    #[test]
    fn mean_f1() {
        let perfect = Counts::symmetric(2, 2, 2).prf();
        let half = Counts::symmetric(1, 2, 2).prf();
        assert_eq!(mean_document_f1(&[perfect, perfect]).unwrap(), 1.0);
        assert_eq!(mean_document_f1(&[half, perfect]).unwrap(), 0.75);
        assert_eq!(mean_document_f1(&[]), Err(MetricsError::EmptyBatch));
        // Micro: 3 matched of 4+4.
        assert_eq!(aggregate_f1(&[half, perfect], Aggregation::Micro).unwrap(), 0.75);
    }

    #[test]
    fn unknown_prediction_document() {
        let corpus = Corpus::default();
        let mut preds = BTreeMap::new();
        preds.insert("nope".to_string(), vec![]);
        assert_eq!(
            evaluate_sequential(&corpus, &preds),
            Err(MetricsError::UnknownDocument("nope".into()))
        );
    }
}
