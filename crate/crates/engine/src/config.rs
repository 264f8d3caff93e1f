//! Run configuration, stored as TOML. Relative paths are resolved against the
//! directory of the file they were read from.

use std::fs;
use std::path::{Path, PathBuf};

use gforge_core::metrics::{Aggregation, MatchMode};
use gforge_llm::BackendConfig;
use serde::{Deserialize, Serialize};

use crate::EngineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewMode {
    #[default]
    Auto,
    Hitl,
}

/// Whether the annotator prompt carries the current guideline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Baseline,
    #[default]
    Guideline,
}

macro_rules! parse_lowercase {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value {other:?} (expected one of: {})", [$($name),+].join(", "))),
                }
            }
        }
    };
}

parse_lowercase!(ReviewMode, "auto" => ReviewMode::Auto, "hitl" => ReviewMode::Hitl);
parse_lowercase!(PromptMode, "baseline" => PromptMode::Baseline, "guideline" => PromptMode::Guideline);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_size: usize,
    pub gate_threshold: f64,
    pub gate_mode: MatchMode,
    pub gate_aggregation: Aggregation,
    pub max_iterations_per_batch: usize,
    pub review_mode: ReviewMode,
    pub prompt_mode: PromptMode,
    pub seed: u64,
    /// PubTator files whose documents are pooled into one corpus, in order.
    pub corpus: Vec<PathBuf>,
    /// Initial guideline. Without one the run starts from an empty guideline.
    pub guideline: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    pub templates: Option<PathBuf>,
    /// Characters of context on each side of a discrepancy.
    pub context_window: usize,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            gate_threshold: 0.8,
            gate_mode: MatchMode::STRICT,
            gate_aggregation: Aggregation::Macro,
            max_iterations_per_batch: 3,
            review_mode: ReviewMode::Auto,
            prompt_mode: PromptMode::Guideline,
            seed: 0,
            corpus: Vec::new(),
            guideline: None,
            templates: None,
            context_window: gforge_core::moderation::DEFAULT_CONTEXT_WINDOW,
            backend: BackendConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    /// Reads a config file, resolving its relative paths and validating it.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            EngineError::Config(m) => EngineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.iter_mut().for_each(fix);
        self.guideline.iter_mut().for_each(fix);
        self.templates.iter_mut().for_each(fix);
        self.backend.cassette.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if !(self.gate_threshold > 0.0 && self.gate_threshold <= 1.0) {
            return bad(format!("gate_threshold must be in (0, 1], got {}", self.gate_threshold));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_iterations_per_batch == 0 {
            return bad("max_iterations_per_batch must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.backend.temperature) {
            return bad(format!("backend.temperature must be in [0, 2], got {}", self.backend.temperature));
        }
        Ok(())
    }
}
