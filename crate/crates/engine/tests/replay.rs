mod support;

use gforge_core::guidelines::{diff, Author};
use gforge_core::metrics::{fmt2, MatchMode};
use gforge_core::moderation::{classify_report_factors, DiscrepancyKind, InfluencingFactor};
use gforge_engine::summary::summarize;
use gforge_engine::{Engine, EngineError, Outcome, ReviewDecision, ReviewRequest, RunRecord, RunStatus, RunStore};
use support::{config, normalized, scripted};

fn replay(config_name: &str, store: &std::path::Path) -> (Engine, RunRecord) {
    let mut engine = Engine::new(RunStore::new(store));
    let record = engine.run(config(config_name), Some("r".into())).unwrap();
    (engine, record)
}

fn strict_f1s(record: &RunRecord, i: usize) -> Vec<f64> {
    record.iterations[i]
        .documents
        .iter()
        .map(|d| d.scores.get(MatchMode::STRICT).f1)
        .collect()
}

fn review(engine: &mut Engine, decision: ReviewDecision) -> RunRecord {
    let resp = engine
        .apply_review("r", &ReviewRequest { iteration: None, decision })
        .unwrap();
    assert_eq!(resp.status, RunStatus::Running);
    assert!(!resp.duplicate);
    assert_eq!(engine.store().record("r").unwrap().status, RunStatus::Running);
    engine.drive("r").unwrap()
}

#[test]
fn auto_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rec) = replay("auto.toml", dir.path());

    assert_eq!(rec.status, RunStatus::Completed);
    assert_eq!(rec.n_batches, 2);
    assert_eq!(rec.iterations.len(), 3);
    let cursors: Vec<_> = rec.iterations.iter().map(|i| (i.batch_index, i.iteration_index)).collect();
    assert_eq!(cursors, [(0, 0), (0, 1), (1, 0)]);

    // Batch membership follows the seeded shuffle of the six documents.
    assert_eq!(rec.iterations[0].doc_ids, ["9100003", "9100002", "9100006"]);
    assert_eq!(rec.iterations[2].doc_ids, ["9100005", "9100004", "9100001"]);

    assert_eq!(strict_f1s(&rec, 0), [1.0, 2.0 / 5.0, 0.0]);
    assert_eq!(strict_f1s(&rec, 1), [1.0, 1.0, 1.0]);
    assert_eq!(strict_f1s(&rec, 2), [1.0, 1.0, 2.0 / 3.0]);
    let gates = rec.gate_trajectory();
    assert!((gates[0] - 7.0 / 15.0).abs() < 1e-12);
    assert_eq!(fmt2(gates[0]), "0.47");
    assert_eq!(gates[1], 1.0);
    assert!((gates[2] - 8.0 / 9.0).abs() < 1e-12);

    // Revision iff gate < 0.8.
    for it in &rec.iterations {
        let below = it.gate_value.unwrap() < 0.8;
        assert_eq!(it.report.is_some(), below);
        assert_eq!(it.revision.is_some(), below);
    }
    let first = &rec.iterations[0];
    let kinds: Vec<_> = first.discrepancies.iter().map(|d| d.kind).collect();
    assert_eq!(
        kinds,
        [
            DiscrepancyKind::FalseNegative,
            DiscrepancyKind::CategoryMismatch,
            DiscrepancyKind::FalsePositive,
            DiscrepancyKind::FalseNegative,
            DiscrepancyKind::FalseNegative,
        ]
    );
    let report = first.report.as_ref().unwrap();
    assert_eq!(report.items.len(), 5);
    assert_eq!(report.exchanges.len(), 2);
    let dist = classify_report_factors(report).unwrap();
    assert!((dist[&InfluencingFactor::AmbiguousAbbreviations] - 0.4).abs() < 1e-12);
    assert!((dist[&InfluencingFactor::GenericDescriptors] - 0.4).abs() < 1e-12);
    assert!((dist[&InfluencingFactor::LowFrequencyTerms] - 0.2).abs() < 1e-12);

    // Lineage: v1 -> v2, authored by the moderator.
    let v1 = &rec.initial_guideline;
    let Some(Outcome::Revised { guideline_version: v2 }) = &first.outcome else {
        panic!("expected a revision, got {:?}", first.outcome)
    };
    assert_eq!(rec.guideline_path(), [v1.as_str(), v2.as_str()]);
    assert_eq!(&rec.current_guideline, v2);
    let store = RunStore::new(dir.path()).guidelines("r").unwrap();
    assert_eq!(store.ancestry(v2).unwrap(), [v2.clone(), v1.clone()]);
    assert_eq!(store.entry(v2).unwrap().author, Some(Author::Llm));
    let changed = diff(&store.load(v1).unwrap(), &store.load(v2).unwrap()).touched_sections();
    assert_eq!(changed.into_iter().collect::<Vec<_>>(), ["abbreviations", "disease-class", "modifier"]);

    let text = summarize(&rec);
    assert!(text.contains("Completed (3 iterations over 2 batches"), "{text}");
    assert!(text.contains("Ambiguous Abbreviations and Acronyms"), "{text}");
}

#[test]
fn replay_is_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let (_, first) = replay("auto.toml", a.path());
    let (_, second) = replay("auto.toml", b.path());
    assert_eq!(normalized(&first), normalized(&second));
    for it in 0..3 {
        let name = format!("iterations/{}.json", first.iterations[it].cursor().key());
        assert_eq!(
            std::fs::read(a.path().join("r").join(&name)).unwrap(),
            std::fs::read(b.path().join("r").join(&name)).unwrap()
        );
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn hitl_approve_matches_auto() {
    let dir = tempfile::tempdir().unwrap();
    let (mut engine, rec) = replay("hitl.toml", dir.path());
    assert_eq!(rec.status, RunStatus::AwaitingReview);
    assert_eq!(rec.awaiting_review, Some(0));
    assert_eq!(rec.iterations.len(), 1);
    assert!(rec.iterations[0].report.is_some());

    let done = review(&mut engine, ReviewDecision::Approve);
    assert_eq!(done.status, RunStatus::Completed);
    let auto_dir = tempfile::tempdir().unwrap();
    let (_, auto) = replay("auto.toml", auto_dir.path());
    assert_eq!(done.gate_trajectory(), auto.gate_trajectory());
    assert_eq!(done.guideline_path(), auto.guideline_path());
    assert_eq!(done.iterations[0].review.as_ref().unwrap().decision, ReviewDecision::Approve);

    // A repeated decision for the same iteration returns the recorded outcome.
    let again = engine
        .apply_review("r", &ReviewRequest { iteration: Some(0), decision: ReviewDecision::Approve })
        .unwrap();
    assert!(again.duplicate);
    assert_eq!(again.outcome, done.iterations[0].outcome.clone().unwrap());
    // Without an iteration reference it is a review of a run that is not waiting.
    assert!(matches!(
        engine.apply_review("r", &ReviewRequest { iteration: None, decision: ReviewDecision::Approve }),
        Err(EngineError::NotAwaitingReview { status: RunStatus::Completed })
    ));
}

#[test]
fn hitl_reject_keeps_the_guideline() {
    let dir = tempfile::tempdir().unwrap();
    let (mut engine, mut rec) = replay("hitl.toml", dir.path());
    let mut rounds = 0;
    while rec.status == RunStatus::AwaitingReview {
        rec = review(&mut engine, ReviewDecision::Reject);
        rounds += 1;
    }
    assert_eq!(rounds, 3);
    assert_eq!(rec.status, RunStatus::Completed);
    assert_eq!(rec.iterations.len(), 4);
    assert_eq!(rec.guideline_path(), [rec.initial_guideline.as_str()]);
    let gates: Vec<String> = rec.gate_trajectory().into_iter().map(fmt2).collect();
    assert_eq!(gates, ["0.47", "0.47", "0.47", "0.89"]);
    assert!(rec.iterations[..3].iter().all(|i| i.outcome == Some(Outcome::Rejected) && i.revision.is_none()));
    let lineage = RunStore::new(dir.path()).guidelines("r").unwrap();
    assert_eq!(lineage.lineage().len(), 1);
}

#[test]
fn hitl_edit_applies_the_reviewer_text() {
    let dir = tempfile::tempdir().unwrap();
    let (mut engine, rec) = replay("hitl.toml", dir.path());
    let v1 = rec.initial_guideline.clone();

    // An edit naming a missing section is refused and the run keeps waiting.
    let bad = ReviewDecision::Edit {
        edits: vec![gforge_core::guidelines::Edit::AppendExample {
            section_id: "no-such-section".into(),
            text: "x".into(),
        }],
        rationale: String::new(),
    };
    assert!(matches!(
        engine.apply_review("r", &ReviewRequest { iteration: None, decision: bad }),
        Err(EngineError::InvalidRevision(_))
    ));
    assert_eq!(engine.store().record("r").unwrap().status, RunStatus::AwaitingReview);

    let done = review(&mut engine, scripted::human_edit());
    assert_eq!(done.status, RunStatus::Completed);
    let revision = done.iterations[0].revision.as_ref().unwrap();
    assert_eq!(revision.author, Author::Human);
    let v2 = done.iterations[1].guideline_version.clone();
    assert_ne!(v2, v1);
    let store = RunStore::new(dir.path()).guidelines("r").unwrap();
    assert_eq!(store.entry(&v2).unwrap().author, Some(Author::Human));
    let changed = diff(&store.load(&v1).unwrap(), &store.load(&v2).unwrap()).touched_sections();
    assert_eq!(changed.into_iter().collect::<Vec<_>>(), ["span-boundaries"]);
    let gates: Vec<String> = done.gate_trajectory().into_iter().map(fmt2).collect();
    assert_eq!(gates, ["0.47", "1.00", "0.89"]);
}

#[test]
fn review_requires_a_waiting_run() {
    let dir = tempfile::tempdir().unwrap();
    let (mut engine, _) = replay("auto.toml", dir.path());
    assert!(matches!(
        engine.apply_review("r", &ReviewRequest { iteration: None, decision: ReviewDecision::Reject }),
        Err(EngineError::NotAwaitingReview { .. })
    ));
    assert!(matches!(
        engine.apply_review("r", &ReviewRequest { iteration: Some(9), decision: ReviewDecision::Reject }),
        Err(EngineError::UnknownIteration(9))
    ));
    assert!(matches!(
        engine.apply_review("missing", &ReviewRequest { iteration: None, decision: ReviewDecision::Reject }),
        Err(EngineError::UnknownRun(_))
    ));
}

#[test]
fn replay_miss_fails_the_run_and_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("auto.toml");
    cfg.seed = 7;
    let mut engine = Engine::new(RunStore::new(dir.path()));
    let err = engine.run(cfg, Some("r".into())).unwrap_err();
    assert!(err.to_string().contains("prompt digest"), "{err}");
    let rec = engine.store().record("r").unwrap();
    assert_eq!(rec.status, RunStatus::Failed);
    assert!(rec.error.unwrap().contains("prompt digest"));
}
