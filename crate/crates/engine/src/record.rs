//! Persisted run records. Everything here is plain data written as JSON under the
//! run directory; the engine and the HTTP service both read it from disk.

use gforge_core::corpus::Annotation;
use gforge_core::guidelines::{Edit, Revision};
use gforge_core::metrics::{ByMode, Prf};
use gforge_core::moderation::{Discrepancy, ModerationReport};
use gforge_core::prompting::OutputWarning;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Running,
    AwaitingReview,
    Completed,
    Failed,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Running => "Running",
            RunStatus::AwaitingReview => "AwaitingReview",
            RunStatus::Completed => "Completed",
            RunStatus::Failed => "Failed",
        })
    }
}

/// The iteration the engine works on next (or is waiting on).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cursor {
    pub batch_index: usize,
    pub iteration_index: usize,
}

impl Cursor {
    /// File stem of the iteration record, e.g. `b0001-i02`.
    pub fn key(&self) -> String {
        format!("b{:04}-i{:02}", self.batch_index, self.iteration_index)
    }
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub status: RunStatus,
    pub cursor: Cursor,
    pub initial_guideline: String,
    pub current_guideline: String,
    pub n_batches: usize,
    /// SHA-256 of the canonical serialization of the run's corpus.
    pub corpus_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How far an iteration has progressed. Each stage is persisted before the next
/// side effect starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Some documents may already carry annotations.
    Annotating,
    Evaluated,
    Moderated,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentResult {
    pub doc_id: String,
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<OutputWarning>,
    pub scores: ByMode<Prf>,
    /// Prompt digest of the annotator exchange.
    pub exchange: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// Gate met; nothing to moderate.
    Passed,
    /// A revision was applied, producing `guideline_version`.
    Revised { guideline_version: String },
    /// The reviewer rejected the proposed revision.
    Rejected,
    /// The moderator's revision did not apply to the current guideline.
    RevisionInvalid { reason: String },
    /// Gate missed but the batch produced no discrepancies to analyze.
    NothingToModerate,
}

/// A reviewer's decision on a proposed revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve,
    /// Apply the reviewer's own edits instead of the proposal.
    Edit {
        edits: Vec<Edit>,
        #[serde(default)]
        rationale: String,
    },
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub decision: ReviewDecision,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub batch_index: usize,
    pub iteration_index: usize,
    pub guideline_version: String,
    /// Whether the annotator prompt included the guideline.
    pub with_guideline: bool,
    pub doc_ids: Vec<String>,
    pub documents: Vec<DocumentResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(default)]
    pub discrepancies: Vec<Discrepancy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ModerationReport>,
    /// The revision actually applied after this iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<Revision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    pub stage: Stage,
}

impl IterationResult {
    pub fn cursor(&self) -> Cursor {
        Cursor {
            batch_index: self.batch_index,
            iteration_index: self.iteration_index,
        }
    }

    /// Guideline version in force after this iteration.
    pub fn next_guideline(&self) -> &str {
        match &self.outcome {
            Some(Outcome::Revised { guideline_version }) => guideline_version,
            _ => &self.guideline_version,
        }
    }
}

/// The full, assembled view of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub cursor: Cursor,
    pub initial_guideline: String,
    pub current_guideline: String,
    pub n_batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Index into `iterations` of the one waiting for a review decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awaiting_review: Option<usize>,
    pub config: RunConfig,
    pub iterations: Vec<IterationResult>,
}

impl RunRecord {
    /// Gate value of each scored iteration, in order.
    pub fn gate_trajectory(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|i| i.gate_value).collect()
    }

    /// Guideline versions the iterations ran under, consecutive duplicates removed.
    pub fn guideline_path(&self) -> Vec<&str> {
        let mut path: Vec<&str> = Vec::new();
        for it in &self.iterations {
            if path.last() != Some(&it.guideline_version.as_str()) {
                path.push(&it.guideline_version);
            }
        }
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_keys_sort_like_cursors() {
        let a = Cursor { batch_index: 2, iteration_index: 10 };
        let b = Cursor { batch_index: 10, iteration_index: 0 };
        assert_eq!(a.key(), "b0002-i10");
        assert!(a < b && a.key() < b.key());
    }

    #[test]
    fn review_decisions_use_a_tag() {
        let d: ReviewDecision = serde_json::from_str(r#"{"decision":"approve"}"#).unwrap();
        assert_eq!(d, ReviewDecision::Approve);
        let d: ReviewDecision = serde_json::from_str(
            r#"{"decision":"edit","edits":[{"op":"append_example","section_id":"modifier","text":"t"}]}"#,
        )
        .unwrap();
        assert!(matches!(d, ReviewDecision::Edit { ref edits, .. } if edits.len() == 1));
        assert!(serde_json::from_str::<ReviewDecision>(r#"{"decision":"maybe"}"#).is_err());
    }
}
