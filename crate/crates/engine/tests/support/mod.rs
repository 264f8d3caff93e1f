#![allow(dead_code)]

pub mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use gforge_engine::{Engine, RunConfig, RunRecord, RunStore};
use gforge_llm::{BackendKind, Gateway};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/replay").join(name)
}

pub fn config(name: &str) -> RunConfig {
    RunConfig::load(&fixture(name)).unwrap()
}

/// Engine whose model is the scripted responder, with no cassette involved.
pub fn scripted_engine(store: &std::path::Path, config: &RunConfig) -> Engine {
    let mut backend = config.backend.clone();
    backend.kind = BackendKind::Live;
    let gateway = Gateway::with_transport(&backend, Some(Box::new(scripted::respond))).unwrap();
    Engine::new(RunStore::new(store)).with_gateway(Arc::new(gateway))
}

/// The record as JSON with the run id blanked, for whole-record comparisons.
pub fn normalized(record: &RunRecord) -> String {
    let mut r = record.clone();
    r.run_id = String::new();
    serde_json::to_string_pretty(&r).unwrap()
}
