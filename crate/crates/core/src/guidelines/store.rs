//! On-disk guideline version store: `versions/<version_id>.txt` holds the canonical
//! rendering of each version and `lineage.json` indexes parent links and authorship.
//! Version files are written once and never modified.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Author, GuidelineDoc, GuidelineError, Revision};
use crate::fsio;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("guideline store I/O at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt lineage index {path}: {message}")]
    Lineage { path: PathBuf, message: String },
    #[error("unknown guideline version {0}")]
    UnknownVersion(String),
    #[error("parent version {0} is not in the store")]
    MissingParent(String),
    #[error("version {expected} failed its content check (recomputed {actual})")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub version_id: String,
    pub parent_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<Author>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_report: Option<String>,
}

#[derive(Debug)]
pub struct GuidelineStore {
    root: PathBuf,
    lineage: Vec<LineageEntry>,
}

impl GuidelineStore {
    /// Opens (or lazily creates on first write) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let index = root.join("lineage.json");
        let lineage = match fs::read_to_string(&index) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Lineage {
                path: index.clone(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(source) => return Err(StoreError::Io { path: index, source }),
        };
        Ok(Self { root, lineage })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }

    pub fn contains(&self, version_id: &str) -> bool {
        self.entry(version_id).is_some()
    }

    pub fn entry(&self, version_id: &str) -> Option<&LineageEntry> {
        self.lineage.iter().find(|e| e.version_id == version_id)
    }

    fn version_path(&self, version_id: &str) -> PathBuf {
        self.root.join("versions").join(format!("{version_id}.txt"))
    }

    /// Stores `doc`. Storing a version that is already present is a no-op.
    pub fn put(&mut self, doc: &GuidelineDoc, revision: Option<&Revision>) -> Result<(), StoreError> {
        if let Some(parent) = doc.parent_version() {
            if !self.contains(parent) {
                return Err(StoreError::MissingParent(parent.to_string()));
            }
        }
        let path = self.version_path(doc.version_id());
        fsio::write_once(&path, doc.render().as_bytes()).map_err(|source| StoreError::Io { path, source })?;
        if self.contains(doc.version_id()) {
            return Ok(());
        }
        self.lineage.push(LineageEntry {
            version_id: doc.version_id().to_string(),
            parent_version: doc.parent_version().map(str::to_string),
            author: revision.map(|r| r.author),
            rationale: revision.map(|r| r.rationale.clone()),
            source_report: revision.and_then(|r| r.source_report.clone()),
        });
        let index = self.root.join("lineage.json");
        let json = serde_json::to_vec_pretty(&self.lineage).expect("lineage serializes");
        fsio::write_atomic(&index, &json).map_err(|source| StoreError::Io { path: index, source })
    }

    /// Loads a version and verifies that its content hashes to its id.
    pub fn load(&self, version_id: &str) -> Result<GuidelineDoc, StoreError> {
        let entry = self
            .entry(version_id)
            .ok_or_else(|| StoreError::UnknownVersion(version_id.to_string()))?;
        let path = self.version_path(version_id);
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Io { path, source })?;
        let doc = GuidelineDoc::from_rendered(&text, entry.parent_version.clone())?;
        if doc.version_id() != version_id {
            return Err(StoreError::HashMismatch {
                expected: version_id.to_string(),
                actual: doc.version_id().to_string(),
            });
        }
        Ok(doc)
    }

    /// Version ids from `version_id` back to its root, inclusive.
    pub fn ancestry(&self, version_id: &str) -> Result<Vec<String>, StoreError> {
        let mut chain = Vec::new();
        let mut cur = Some(version_id.to_string());
        while let Some(id) = cur {
            let entry = self.entry(&id).ok_or_else(|| StoreError::UnknownVersion(id.clone()))?;
            if chain.len() > self.lineage.len() {
                return Err(StoreError::Lineage {
                    path: self.root.join("lineage.json"),
                    message: "parent links form a cycle".into(),
                });
            }
            chain.push(id);
            cur = entry.parent_version.clone();
        }
        Ok(chain)
    }
}
