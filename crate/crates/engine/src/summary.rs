//! Plain-text run summary: one line per iteration plus the influencing-factor
//! distribution over every report item in the run.

use std::fmt::Write;

use gforge_core::guidelines::Author;
use gforge_core::metrics::fmt2;
use gforge_core::moderation::{factor_distribution, InfluencingFactor, ReportItem};

use crate::record::{Outcome, RunRecord, Stage};

fn short(id: &str) -> &str {
    &id[..id.len().min(12)]
}

fn describe(outcome: Option<&Outcome>, author: Option<Author>) -> String {
    match outcome {
        None => "pending".into(),
        Some(Outcome::Passed) => "passed".into(),
        Some(Outcome::Revised { guideline_version }) => {
            let by = match author {
                Some(Author::Human) => "human",
                _ => "llm",
            };
            format!("revised -> {} ({by})", short(guideline_version))
        }
        Some(Outcome::Rejected) => "revision rejected".into(),
        Some(Outcome::RevisionInvalid { reason }) => format!("revision invalid: {reason}"),
        Some(Outcome::NothingToModerate) => "below gate, no discrepancies".into(),
    }
}

/// Every report item in the run, in iteration order.
pub fn report_items(record: &RunRecord) -> Vec<&ReportItem> {
    record
        .iterations
        .iter()
        .filter_map(|it| it.report.as_ref())
        .flat_map(|r| &r.items)
        .collect()
}

pub fn summarize(record: &RunRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Run {}: {} ({} iterations over {} batches, gate {} >= {})",
        record.run_id,
        record.status,
        record.iterations.len(),
        record.n_batches,
        record.config.gate_mode.label(),
        fmt2(record.config.gate_threshold),
    );
    if let Some(err) = &record.error {
        let _ = writeln!(out, "Error: {err}");
    }
    let _ = writeln!(out, "{:<6} {:<5} {:<12} {:>5}  Outcome", "Batch", "Iter", "Guideline", "Gate");
    for it in &record.iterations {
        let gate = it.gate_value.map_or_else(|| "-".to_string(), fmt2);
        let outcome = if it.stage == Stage::Moderated {
            "awaiting review".to_string()
        } else {
            describe(it.outcome.as_ref(), it.revision.as_ref().map(|r| r.author))
        };
        let _ = writeln!(
            out,
            "{:<6} {:<5} {:<12} {:>5}  {}",
            it.batch_index + 1,
            it.iteration_index + 1,
            short(&it.guideline_version),
            gate,
            outcome
        );
    }
    let items: Vec<ReportItem> = report_items(record).into_iter().cloned().collect();
    match factor_distribution(&items) {
        Ok(dist) => {
            let _ = writeln!(out, "Influencing factors ({} report items):", items.len());
            let width = InfluencingFactor::ALL.iter().map(|f| f.name().len()).max().unwrap_or(0);
            for (factor, share) in dist {
                let _ = writeln!(out, "  {:<width$}  {:>5}%", factor.name(), format!("{:.1}", share * 100.0));
            }
        }
        Err(_) => {
            let _ = writeln!(out, "Influencing factors: no report items");
        }
    }
    out
}
