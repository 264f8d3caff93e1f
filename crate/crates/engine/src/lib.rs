//! The moderation loop. A run annotates each batch with the current guideline,
//! scores it, and when the gate is missed asks the moderator for a report and a
//! revision, which is applied directly or held for a reviewer. Every step is
//! persisted under the run directory so a run can be resumed after a crash.

pub mod config;
mod engine;
pub mod record;
pub mod store;
pub mod summary;

use std::path::PathBuf;

use gforge_core::corpus::CorpusError;
use gforge_core::guidelines::StoreError;
use gforge_core::guidelines::GuidelineError;
use gforge_core::metrics::MetricsError;
use gforge_core::prompting::PromptError;
use gforge_llm::GatewayError;
use thiserror::Error;

pub use config::{PromptMode, ReviewMode, RunConfig};
pub use engine::{annotate_documents, load_corpus, Engine, ReviewRequest, ReviewResponse};
pub use record::{
    Cursor, DocumentResult, IterationResult, Outcome, ReviewDecision, ReviewRecord, RunRecord, RunState, RunStatus,
    Stage,
};
pub use store::RunStore;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt run record {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error(transparent)]
    Batch(#[from] CorpusError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    GuidelineStore(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("moderator reply: {0}")]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("invalid run id {0:?} (use letters, digits, '-', '_' and '.')")]
    InvalidRunId(String),
    #[error("run {0} already exists")]
    RunExists(String),
    #[error("run {0} is locked by another process")]
    Busy(String),
    #[error("run is {status}, not awaiting review")]
    NotAwaitingReview { status: RunStatus },
    #[error("iteration {0} does not exist")]
    UnknownIteration(usize),
    #[error("revision rejected: {0}")]
    InvalidRevision(GuidelineError),
    #[error("corpus files changed since the run was created")]
    CorpusChanged,
    /// Raised by the test hook that simulates a crash after a persisted write.
    #[error("halted after {0} persisted transitions")]
    Halted(usize),
}
