//! Run directory layout:
//!
//! ```text
//! <root>/<run_id>/
//!   config.toml                 resolved run configuration
//!   run.json                    RunState
//!   lock                        advisory lock held by the single writer
//!   iterations/bNNNN-iNN.json   one IterationResult per iteration
//!   guidelines/                 guideline version store (versions/, lineage.json)
//! ```

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io;
use std::path::{Path, PathBuf};

use gforge_core::fsio::write_atomic;
use gforge_core::guidelines::GuidelineStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::record::{Cursor, IterationResult, RunRecord, RunState, RunStatus, Stage};
use crate::EngineError;

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

/// Exclusive hold on one run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run ids become directory names, so keep them to a safe alphabet.
pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn state_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("run.json")
    }

    fn iteration_path(&self, run_id: &str, cursor: Cursor) -> PathBuf {
        self.run_dir(run_id).join("iterations").join(format!("{}.json", cursor.key()))
    }

    pub fn exists(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.state_path(run_id).is_file()
    }

    fn ensure(&self, run_id: &str) -> Result<(), EngineError> {
        if self.exists(run_id) {
            Ok(())
        } else {
            Err(EngineError::UnknownRun(run_id.to_string()))
        }
    }

    /// Ids of all runs under the root, sorted.
    pub fn list(&self) -> Result<Vec<String>, EngineError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(id) = entry.file_name().to_str() {
                if self.exists(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, EngineError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|e| EngineError::Record {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("records serialize");
        bytes.push(b'\n');
        write_atomic(path, &bytes).map_err(io_err(path))
    }

    pub fn read_state(&self, run_id: &str) -> Result<RunState, EngineError> {
        self.ensure(run_id)?;
        Self::read_json(&self.state_path(run_id))
    }

    pub fn write_state(&self, state: &RunState) -> Result<(), EngineError> {
        Self::write_json(&self.state_path(&state.run_id), state)
    }

    pub fn read_config(&self, run_id: &str) -> Result<RunConfig, EngineError> {
        let path = self.run_dir(run_id).join("config.toml");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        RunConfig::from_toml(&text)
    }

    pub fn write_config(&self, run_id: &str, config: &RunConfig) -> Result<(), EngineError> {
        let path = self.run_dir(run_id).join("config.toml");
        write_atomic(&path, config.to_toml().as_bytes()).map_err(io_err(&path))
    }

    pub fn read_iteration(&self, run_id: &str, cursor: Cursor) -> Result<Option<IterationResult>, EngineError> {
        let path = self.iteration_path(run_id, cursor);
        if !path.is_file() {
            return Ok(None);
        }
        Self::read_json(&path).map(Some)
    }

    pub fn write_iteration(&self, run_id: &str, it: &IterationResult) -> Result<(), EngineError> {
        Self::write_json(&self.iteration_path(run_id, it.cursor()), it)
    }

    /// All iteration records of a run in execution order.
    pub fn iterations(&self, run_id: &str) -> Result<Vec<IterationResult>, EngineError> {
        self.ensure(run_id)?;
        let dir = self.run_dir(run_id).join("iterations");
        let mut paths = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect::<Vec<_>>(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        paths.sort();
        paths.iter().map(|p| Self::read_json(p)).collect()
    }

    pub fn guidelines(&self, run_id: &str) -> Result<GuidelineStore, EngineError> {
        Ok(GuidelineStore::open(self.run_dir(run_id).join("guidelines"))?)
    }

    /// Takes the run's writer lock without blocking.
    pub fn lock(&self, run_id: &str) -> Result<RunLock, EngineError> {
        self.ensure(run_id)?;
        let path = self.run_dir(run_id).join("lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(RunLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(EngineError::Busy(run_id.to_string())),
            Err(TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }

    /// Assembles the full record of a run from disk.
    pub fn record(&self, run_id: &str) -> Result<RunRecord, EngineError> {
        let state = self.read_state(run_id)?;
        let config = self.read_config(run_id)?;
        let iterations = self.iterations(run_id)?;
        let awaiting_review = if state.status == RunStatus::AwaitingReview {
            iterations
                .iter()
                .position(|it| it.cursor() == state.cursor && it.stage == Stage::Moderated)
        } else {
            None
        };
        Ok(RunRecord {
            run_id: state.run_id,
            status: state.status,
            cursor: state.cursor,
            initial_guideline: state.initial_guideline,
            current_guideline: state.current_guideline,
            n_batches: state.n_batches,
            error: state.error,
            awaiting_review,
            config,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_alphabet() {
        assert!(valid_run_id("run-1_a.b"));
        for bad in ["", ".hidden", "a/b", "..", "a b"] {
            assert!(!valid_run_id(bad), "{bad:?}");
        }
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        fs::create_dir_all(store.run_dir("r")).unwrap();
        fs::write(store.run_dir("r").join("run.json"), "{}").unwrap();
        let held = store.lock("r").unwrap();
        assert!(matches!(store.lock("r"), Err(EngineError::Busy(_))));
        drop(held);
        store.lock("r").unwrap();
    }

    #[test]
    fn unknown_runs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        assert!(store.list().unwrap().is_empty());
        assert!(matches!(store.record("nope"), Err(EngineError::UnknownRun(_))));
        assert!(matches!(store.record("../x"), Err(EngineError::UnknownRun(_))));
    }
}
