//! Regenerates `fixtures/replay/cassette.jsonl` by running every fixture scenario
//! (auto, and hitl with approve, reject and edit) in record mode against the
//! scripted model.
//!
//! ```text
//! cargo run -p gforge-engine --example record_fixture_cassette
//! ```

#[path = "../tests/support/scripted.rs"]
mod scripted;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use gforge_engine::{Engine, ReviewDecision, ReviewRequest, RunConfig, RunStatus, RunStore};
use gforge_llm::{BackendKind, Exchange, Gateway};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/replay")
}

fn scenario(cassette: &Path, config: &str, decisions: &[ReviewDecision]) -> Result<()> {
    let mut cfg = RunConfig::load(&fixtures().join(config))?;
    cfg.backend.kind = BackendKind::Record;
    cfg.backend.cassette = Some(cassette.to_path_buf());
    let gateway = Gateway::with_transport(&cfg.backend, Some(Box::new(scripted::respond)))?;
    let store = tempfile::tempdir()?;
    let mut engine = Engine::new(RunStore::new(store.path())).with_gateway(Arc::new(gateway));
    let mut record = engine.run(cfg, Some("fixture".into()))?;
    let mut decisions = decisions.iter();
    while record.status == RunStatus::AwaitingReview {
        let decision = decisions.next().context("scenario ran out of review decisions")?;
        engine.apply_review(
            "fixture",
            &ReviewRequest {
                iteration: None,
                decision: decision.clone(),
            },
        )?;
        record = engine.drive("fixture")?;
    }
    if record.status != RunStatus::Completed {
        bail!("{config} ended {}", record.status);
    }
    Ok(())
}

fn main() -> Result<()> {
    let target = fixtures().join("cassette.jsonl");
    let scratch = tempfile::tempdir()?;
    let raw = scratch.path().join("raw.jsonl");
    scenario(&raw, "auto.toml", &[])?;
    scenario(&raw, "hitl.toml", &[ReviewDecision::Approve])?;
    scenario(&raw, "hitl.toml", &vec![ReviewDecision::Reject; 3])?;
    scenario(&raw, "hitl.toml", &[scripted::human_edit()])?;

    // Keep one line per prompt and drop wall-clock time so regeneration is stable.
    let mut seen = HashSet::new();
    let mut out = String::new();
    for line in std::fs::read_to_string(&raw)?.lines() {
        let mut ex: Exchange = serde_json::from_str(line)?;
        if seen.insert(ex.prompt_digest.clone()) {
            ex.timestamp = 0;
            out.push_str(&serde_json::to_string(&ex)?);
            out.push('\n');
        }
    }
    std::fs::write(&target, out)?;
    println!("wrote {} exchanges to {}", seen.len(), target.display());
    Ok(())
}
