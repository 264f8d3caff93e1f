use std::collections::BTreeMap;
use std::sync::Arc;

use gforge_core::corpus::{batch_count, parse_pubtator, sample_batch, serialize_pubtator, Corpus, Document};
use gforge_core::guidelines::GuidelineStore;
use gforge_core::guidelines::{apply_revision, parse_guideline, Author, GuidelineDoc, Revision};
use gforge_core::metrics::{aggregate_f1, DocumentEvaluation};
use gforge_core::moderation::{extract_discrepancies, ModerationReport};
use gforge_core::prompting::{
    parse_annotator_output, parse_report_items, parse_revision, OutputWarning, ParsedOutput, PromptBuilder,
    PromptError, Templates,
};
use gforge_llm::{Exchange, Gateway};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PromptMode, ReviewMode, RunConfig};
use crate::record::{
    Cursor, DocumentResult, IterationResult, Outcome, ReviewDecision, ReviewRecord, RunRecord, RunState, RunStatus,
    Stage,
};
use crate::store::{valid_run_id, RunStore};
use crate::EngineError;

/// Review decision as posted by a client. `iteration` (an index into the run's
/// iterations) makes the request idempotent: repeating a decision for an
/// iteration that was already reviewed returns the recorded outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(flatten)]
    pub decision: ReviewDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub iteration: usize,
    pub outcome: Outcome,
    pub status: RunStatus,
    /// True when the decision had already been recorded.
    pub duplicate: bool,
}

/// Loads and pools the corpus files of a run.
pub fn load_corpus(config: &RunConfig) -> Result<Corpus, EngineError> {
    let mut corpus = Corpus::default();
    for path in &config.corpus {
        let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.clone(),
            source,
        })?;
        let part = parse_pubtator(&text).map_err(|source| EngineError::Corpus {
            path: path.clone(),
            source,
        })?;
        corpus = corpus.merge(part).map_err(|source| EngineError::Corpus {
            path: path.clone(),
            source,
        })?;
    }
    Ok(corpus)
}

fn corpus_digest(corpus: &Corpus) -> String {
    Sha256::digest(serialize_pubtator(corpus).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn load_guideline(config: &RunConfig) -> Result<GuidelineDoc, EngineError> {
    let text = match &config.guideline {
        Some(path) => std::fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    Ok(parse_guideline(&text)?)
}

fn prompt_builder(config: &RunConfig) -> Result<PromptBuilder, EngineError> {
    let templates = match &config.templates {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::builtin(),
    };
    Ok(PromptBuilder::new(templates))
}

fn for_each_document<T: Send>(docs: &[&Document], f: impl Fn(&Document) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        docs.par_iter().map(|d| f(d)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        docs.iter().map(|d| f(d)).collect()
    }
}

fn annotate_one(
    gateway: &Gateway,
    prompts: &PromptBuilder,
    doc: &Document,
    guideline: Option<&GuidelineDoc>,
) -> Result<(Exchange, ParsedOutput), EngineError> {
    let exchange = gateway.complete(&prompts.annotator_prompt(doc, guideline))?;
    let parsed = match parse_annotator_output(&exchange.response, doc) {
        Ok(p) => p,
        Err(PromptError::Unparseable) => ParsedOutput {
            annotations: Vec::new(),
            warnings: vec![OutputWarning {
                item: exchange.response.chars().take(200).collect(),
                reason: "reply contains no annotation list".into(),
            }],
        },
        Err(e) => return Err(e.into()),
    };
    Ok((exchange, parsed))
}

/// Annotates each of `docs` once; results are keyed by document id.
pub fn annotate_documents(
    gateway: &Gateway,
    prompts: &PromptBuilder,
    docs: &[&Document],
    guideline: Option<&GuidelineDoc>,
) -> Result<BTreeMap<String, ParsedOutput>, EngineError> {
    for_each_document(docs, |doc| {
        annotate_one(gateway, prompts, doc, guideline).map(|(_, parsed)| (doc.doc_id.clone(), parsed))
    })
    .into_iter()
    .collect()
}

struct RunContext {
    config: RunConfig,
    corpus: Corpus,
    gateway: Arc<Gateway>,
    prompts: PromptBuilder,
    guidelines: GuidelineStore,
}

pub struct Engine {
    store: RunStore,
    gateway: Option<Arc<Gateway>>,
    halt_after: Option<usize>,
    transitions: usize,
}

impl Engine {
    pub fn new(store: RunStore) -> Self {
        Self {
            store,
            gateway: None,
            halt_after: None,
            transitions: 0,
        }
    }

    /// Uses `gateway` instead of building one from each run's backend config.
    pub fn with_gateway(mut self, gateway: Arc<Gateway>) -> Self {
        self.gateway = Some(gateway);
        self
    }

    /// Stops with [`EngineError::Halted`] right after the `n`-th persisted write,
    /// leaving the run directory exactly as a crash at that point would.
    #[doc(hidden)]
    pub fn halt_after(mut self, n: usize) -> Self {
        self.halt_after = Some(n);
        self
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    /// Number of persisted writes so far.
    pub fn transitions(&self) -> usize {
        self.transitions
    }

    fn persisted(&mut self) -> Result<(), EngineError> {
        self.transitions += 1;
        match self.halt_after {
            Some(n) if self.transitions >= n => Err(EngineError::Halted(self.transitions)),
            _ => Ok(()),
        }
    }

    fn save_state(&mut self, state: &RunState) -> Result<(), EngineError> {
        self.store.write_state(state)?;
        self.persisted()
    }

    fn save_iteration(&mut self, run_id: &str, it: &IterationResult) -> Result<(), EngineError> {
        self.store.write_iteration(run_id, it)?;
        self.persisted()
    }

    fn save_guideline(
        &mut self,
        guidelines: &mut GuidelineStore,
        doc: &GuidelineDoc,
        rev: &Revision,
    ) -> Result<(), EngineError> {
        guidelines.put(doc, Some(rev))?;
        self.persisted()
    }

    /// Creates the run directory and its initial state. Returns the run id.
    pub fn create_run(&mut self, mut config: RunConfig, run_id: Option<String>) -> Result<String, EngineError> {
        config.validate()?;
        let run_id = run_id.unwrap_or_else(|| {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            format!("run-{secs}-{:04x}", rand::random::<u16>())
        });
        if !valid_run_id(&run_id) {
            return Err(EngineError::InvalidRunId(run_id));
        }
        if self.store.exists(&run_id) {
            return Err(EngineError::RunExists(run_id));
        }
        let cwd = std::env::current_dir().unwrap_or_default();
        config.resolve_paths(&cwd);
        let corpus = load_corpus(&config)?;
        let guideline = load_guideline(&config)?;
        prompt_builder(&config)?;

        let dir = self.store.run_dir(&run_id);
        std::fs::create_dir_all(&dir).map_err(|source| EngineError::Io { path: dir, source })?;
        self.store.write_config(&run_id, &config)?;
        self.store.guidelines(&run_id)?.put(&guideline, None)?;
        let state = RunState {
            run_id: run_id.clone(),
            status: RunStatus::Running,
            cursor: Cursor::default(),
            initial_guideline: guideline.version_id().to_string(),
            current_guideline: guideline.version_id().to_string(),
            n_batches: batch_count(corpus.len(), config.batch_size),
            corpus_digest: corpus_digest(&corpus),
            error: None,
        };
        self.store.write_state(&state)?;
        tracing::info!(run_id, batches = state.n_batches, "created run");
        Ok(run_id)
    }

    /// Creates a run and drives it.
    pub fn run(&mut self, config: RunConfig, run_id: Option<String>) -> Result<RunRecord, EngineError> {
        let id = self.create_run(config, run_id)?;
        self.drive(&id)
    }

    /// Advances a run until it completes, needs a review, or fails. Safe to call on
    /// a run in any state; a failed run is retried from its last persisted step.
    pub fn drive(&mut self, run_id: &str) -> Result<RunRecord, EngineError> {
        let _lock = self.store.lock(run_id)?;
        match self.drive_locked(run_id) {
            Err(e @ (EngineError::Halted(_) | EngineError::Busy(_) | EngineError::UnknownRun(_))) => Err(e),
            Err(e) => {
                tracing::error!(run_id, error = %e, "run failed");
                let mut state = self.store.read_state(run_id)?;
                state.status = RunStatus::Failed;
                state.error = Some(e.to_string());
                self.store.write_state(&state)?;
                Err(e)
            }
            Ok(record) => Ok(record),
        }
    }

    fn context(&self, run_id: &str, state: &RunState) -> Result<RunContext, EngineError> {
        let config = self.store.read_config(run_id)?;
        let corpus = load_corpus(&config)?;
        if corpus_digest(&corpus) != state.corpus_digest {
            return Err(EngineError::CorpusChanged);
        }
        let gateway = match &self.gateway {
            Some(g) => g.clone(),
            None => Arc::new(Gateway::from_config(&config.backend)?),
        };
        Ok(RunContext {
            prompts: prompt_builder(&config)?,
            guidelines: self.store.guidelines(run_id)?,
            config,
            corpus,
            gateway,
        })
    }

    fn drive_locked(&mut self, run_id: &str) -> Result<RunRecord, EngineError> {
        let mut state = self.store.read_state(run_id)?;
        match state.status {
            RunStatus::Completed => return self.store.record(run_id),
            RunStatus::AwaitingReview => {
                // A review may have been recorded without the state catching up.
                match self.store.read_iteration(run_id, state.cursor)? {
                    Some(it) if it.stage == Stage::Resolved => {
                        let max = self.store.read_config(run_id)?.max_iterations_per_batch;
                        advance(&mut state, &it, max);
                        state.status = RunStatus::Running;
                        self.save_state(&state)?;
                    }
                    _ => return self.store.record(run_id),
                }
            }
            RunStatus::Failed => {
                state.status = RunStatus::Running;
                state.error = None;
                self.save_state(&state)?;
            }
            RunStatus::Running => {}
        }
        let mut ctx = self.context(run_id, &state)?;

        while state.cursor.batch_index < state.n_batches {
            let cursor = state.cursor;
            let batch = sample_batch(&ctx.corpus, ctx.config.batch_size, ctx.config.seed, cursor.batch_index)?;
            let mut it = match self.store.read_iteration(run_id, cursor)? {
                Some(it) => it,
                None => IterationResult {
                    batch_index: cursor.batch_index,
                    iteration_index: cursor.iteration_index,
                    guideline_version: state.current_guideline.clone(),
                    with_guideline: ctx.config.prompt_mode == PromptMode::Guideline,
                    doc_ids: batch.iter().map(|d| d.doc_id.clone()).collect(),
                    documents: Vec::new(),
                    gate_value: None,
                    passed: None,
                    discrepancies: Vec::new(),
                    report: None,
                    revision: None,
                    review: None,
                    outcome: None,
                    stage: Stage::Annotating,
                },
            };
            let guideline = ctx.guidelines.load(&it.guideline_version)?;

            if it.stage == Stage::Annotating {
                self.annotate_and_score(run_id, &ctx, &batch, &guideline, &mut it)?;
            }
            if it.stage == Stage::Evaluated {
                self.moderate(run_id, &ctx, &batch, &guideline, &mut it)?;
            }
            if it.stage == Stage::Moderated {
                match ctx.config.review_mode {
                    ReviewMode::Auto => self.apply_proposal(run_id, &mut ctx.guidelines, &guideline, &mut it)?,
                    ReviewMode::Hitl => {
                        state.status = RunStatus::AwaitingReview;
                        self.save_state(&state)?;
                        tracing::info!(run_id, iteration = %cursor.key(), "awaiting review");
                        return self.store.record(run_id);
                    }
                }
            }
            advance(&mut state, &it, ctx.config.max_iterations_per_batch);
            self.save_state(&state)?;
        }
        if state.status != RunStatus::Completed {
            state.status = RunStatus::Completed;
            self.save_state(&state)?;
        }
        self.store.record(run_id)
    }

    fn annotate_and_score(
        &mut self,
        run_id: &str,
        ctx: &RunContext,
        batch: &[&Document],
        guideline: &GuidelineDoc,
        it: &mut IterationResult,
    ) -> Result<(), EngineError> {
        let todo: Vec<&Document> = batch
            .iter()
            .copied()
            .filter(|d| !it.documents.iter().any(|r| r.doc_id == d.doc_id))
            .collect();
        let shown = it.with_guideline.then_some(guideline);
        let results = for_each_document(&todo, |doc| {
            let (exchange, parsed) = annotate_one(&ctx.gateway, &ctx.prompts, doc, shown)?;
            let gold = ctx.corpus.annotations(&doc.doc_id);
            let scores = DocumentEvaluation::compute(&doc.doc_id, &parsed.annotations, gold)?.prf();
            Ok::<_, EngineError>(DocumentResult {
                doc_id: doc.doc_id.clone(),
                annotations: parsed.annotations,
                warnings: parsed.warnings,
                scores,
                exchange: exchange.prompt_digest,
            })
        });
        let mut first_error = None;
        for r in results {
            match r {
                Ok(d) => it.documents.push(d),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        let position = |id: &str| it.doc_ids.iter().position(|d| d == id);
        it.documents.sort_by_key(|d| position(&d.doc_id));
        if let Some(e) = first_error {
            self.save_iteration(run_id, it)?;
            return Err(e);
        }

        let mode = ctx.config.gate_mode;
        let per_doc: Vec<_> = it.documents.iter().map(|d| *d.scores.get(mode)).collect();
        let gate = aggregate_f1(&per_doc, ctx.config.gate_aggregation)?;
        it.gate_value = Some(gate);
        it.passed = Some(gate >= ctx.config.gate_threshold);
        it.discrepancies.clear();
        for (doc, result) in batch.iter().zip(&it.documents) {
            it.discrepancies.extend(extract_discrepancies(
                doc,
                &result.annotations,
                ctx.corpus.annotations(&doc.doc_id),
                mode,
                ctx.config.context_window,
            )?);
        }
        it.stage = Stage::Evaluated;
        tracing::info!(run_id, iteration = %it.cursor().key(), gate, "evaluated");
        self.save_iteration(run_id, it)
    }

    fn moderate(
        &mut self,
        run_id: &str,
        ctx: &RunContext,
        batch: &[&Document],
        guideline: &GuidelineDoc,
        it: &mut IterationResult,
    ) -> Result<(), EngineError> {
        if it.passed == Some(true) {
            it.outcome = Some(Outcome::Passed);
            it.stage = Stage::Resolved;
            return self.save_iteration(run_id, it);
        }
        if it.discrepancies.is_empty() {
            it.outcome = Some(Outcome::NothingToModerate);
            it.stage = Stage::Resolved;
            return self.save_iteration(run_id, it);
        }
        let analyze = ctx.prompts.moderator_analyze_prompt(&it.discrepancies, guideline, batch)?;
        let analysis = ctx.gateway.complete(&analyze)?;
        let items = parse_report_items(&analysis.response, &it.discrepancies)?;
        let mut report = ModerationReport {
            items,
            proposed_revision: Revision {
                edits: Vec::new(),
                rationale: String::new(),
                author: Author::Llm,
                source_report: None,
            },
            exchanges: vec![analysis.prompt_digest],
        };
        let update = ctx.gateway.complete(&ctx.prompts.moderator_update_prompt(&report, guideline))?;
        let mut revision = parse_revision(&update.response)?;
        revision.source_report = Some(it.cursor().key());
        report.proposed_revision = revision;
        report.exchanges.push(update.prompt_digest);
        it.report = Some(report);
        it.stage = Stage::Moderated;
        self.save_iteration(run_id, it)
    }

    fn apply_proposal(
        &mut self,
        run_id: &str,
        guidelines: &mut GuidelineStore,
        guideline: &GuidelineDoc,
        it: &mut IterationResult,
    ) -> Result<(), EngineError> {
        let proposal = it.report.as_ref().expect("moderated iteration has a report").proposed_revision.clone();
        match apply_revision(guideline, &proposal) {
            Ok(child) => {
                self.save_guideline(guidelines, &child, &proposal)?;
                it.outcome = Some(Outcome::Revised {
                    guideline_version: child.version_id().to_string(),
                });
                it.revision = Some(proposal);
            }
            Err(e) => {
                tracing::warn!(run_id, error = %e, "moderator revision does not apply");
                it.outcome = Some(Outcome::RevisionInvalid { reason: e.to_string() });
            }
        }
        it.stage = Stage::Resolved;
        self.save_iteration(run_id, it)
    }

    /// Records a review decision for the iteration the run is waiting on and marks
    /// the run runnable again. The caller resumes it with [`Engine::drive`].
    pub fn apply_review(&mut self, run_id: &str, request: &ReviewRequest) -> Result<ReviewResponse, EngineError> {
        let _lock = self.store.lock(run_id)?;
        let mut state = self.store.read_state(run_id)?;
        let iterations = self.store.iterations(run_id)?;
        if let Some(n) = request.iteration {
            let it = iterations.get(n).ok_or(EngineError::UnknownIteration(n))?;
            if let Some(review) = &it.review {
                return Ok(ReviewResponse {
                    iteration: n,
                    outcome: review.outcome.clone(),
                    status: state.status,
                    duplicate: true,
                });
            }
        }
        let not_awaiting = EngineError::NotAwaitingReview { status: state.status };
        if state.status != RunStatus::AwaitingReview {
            return Err(not_awaiting);
        }
        let Some(n) = iterations
            .iter()
            .position(|it| it.cursor() == state.cursor && it.stage == Stage::Moderated)
        else {
            return Err(not_awaiting);
        };
        if request.iteration.is_some_and(|m| m != n) {
            return Err(not_awaiting);
        }
        let mut it = iterations[n].clone();
        let mut guidelines = self.store.guidelines(run_id)?;
        let guideline = guidelines.load(&it.guideline_version)?;

        let revision = match &request.decision {
            ReviewDecision::Approve => Some(
                it.report
                    .as_ref()
                    .expect("moderated iteration has a report")
                    .proposed_revision
                    .clone(),
            ),
            ReviewDecision::Edit { edits, rationale } => Some(Revision {
                edits: edits.clone(),
                rationale: rationale.clone(),
                author: Author::Human,
                source_report: Some(it.cursor().key()),
            }),
            ReviewDecision::Reject => None,
        };
        let outcome = match &revision {
            Some(rev) => {
                let child = apply_revision(&guideline, rev).map_err(EngineError::InvalidRevision)?;
                self.save_guideline(&mut guidelines, &child, rev)?;
                Outcome::Revised {
                    guideline_version: child.version_id().to_string(),
                }
            }
            None => Outcome::Rejected,
        };
        it.review = Some(ReviewRecord {
            decision: request.decision.clone(),
            outcome: outcome.clone(),
        });
        it.outcome = Some(outcome.clone());
        it.revision = revision;
        it.stage = Stage::Resolved;
        self.save_iteration(run_id, &it)?;

        let max = self.store.read_config(run_id)?.max_iterations_per_batch;
        advance(&mut state, &it, max);
        state.status = RunStatus::Running;
        self.save_state(&state)?;
        Ok(ReviewResponse {
            iteration: n,
            outcome,
            status: state.status,
            duplicate: false,
        })
    }
}

/// Moves the cursor past a resolved iteration: the same batch again while the gate
/// is missed and iterations remain, otherwise the next batch.
fn advance(state: &mut RunState, it: &IterationResult, max_iterations: usize) {
    state.current_guideline = it.next_guideline().to_string();
    state.cursor = if it.passed == Some(true) || it.iteration_index + 1 >= max_iterations {
        Cursor {
            batch_index: it.batch_index + 1,
            iteration_index: 0,
        }
    } else {
        Cursor {
            batch_index: it.batch_index,
            iteration_index: it.iteration_index + 1,
        }
    };
}
