//! Cassettes: JSON Lines files of recorded prompt/response exchanges.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_digest: String,
    pub prompt: String,
    pub response: String,
    pub model: String,
    /// Seconds since the Unix epoch at which the response arrived.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
}

/// Hex SHA-256 of the canonical JSON of `{model, prompt, temperature}`.
pub fn prompt_digest(model: &str, prompt: &str, temperature: f64) -> String {
    let canonical = serde_json::to_vec(&DigestInput {
        model,
        prompt,
        temperature,
    })
    .expect("digest input serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

/// A loaded cassette. When a digest was recorded more than once, the first
/// recording answers.
#[derive(Debug, Default)]
pub struct Cassette {
    by_digest: HashMap<String, Exchange>,
    len: usize,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, (PathBuf, String)> {
        let text = fs::read_to_string(path).map_err(|e| (path.to_path_buf(), e.to_string()))?;
        Self::parse(&text).map_err(|m| (path.to_path_buf(), m))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cassette = Cassette::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            cassette.len += 1;
            cassette.by_digest.entry(ex.prompt_digest.clone()).or_insert(ex);
        }
        Ok(cassette)
    }

    pub fn get(&self, digest: &str) -> Option<&Exchange> {
        self.by_digest.get(digest)
    }

    /// Number of recorded lines, duplicates included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Appends exchanges to a cassette file, one synced line per exchange.
#[derive(Debug)]
pub(crate) struct CassetteWriter {
    file: File,
}

impl CassetteWriter {
    pub(crate) fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub(crate) fn append(&mut self, ex: &Exchange) -> io::Result<()> {
        let mut line = serde_json::to_vec(ex).expect("exchange serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}
