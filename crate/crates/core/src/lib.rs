//! Core of the guideline moderation workbench: PubTator corpora, span-matching
//! evaluation, versioned annotation guidelines, and the prompts exchanged with the
//! annotator and moderator models.
//!
//! Everything here is pure computation plus the on-disk guideline store; network
//! access lives in `gforge-llm` and the iterative workflow in `gforge-engine`.

pub mod corpus;
pub mod fsio;
pub mod guidelines;
pub mod matching;
pub mod metrics;
pub mod moderation;
pub mod prompting;
pub mod report;

pub use corpus::{parse_pubtator, sample_batch, serialize_pubtator, Annotation, Category, Corpus, CorpusError, Document};
pub use guidelines::{apply_revision, diff, parse_guideline, render, Author, Edit, GuidelineDoc, GuidelineError, Revision};
pub use metrics::{
    match_annotations, mean_document_f1, per_category_scores, score, Boundary, ByCategory, ByMode, Evaluation, MatchMode,
    MatchResult, MetricsError, Prf,
};
pub use moderation::{
    classify_report_factors, extract_discrepancies, Discrepancy, DiscrepancyKind, InfluencingFactor, ModerationReport,
    ReportItem,
};
pub use prompting::{
    build_annotator_prompt, build_moderator_analyze_prompt, build_moderator_update_prompt, parse_annotator_output,
    ParsedOutput, PromptBuilder, PromptError, Templates,
};
