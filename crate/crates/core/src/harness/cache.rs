//! Append-only candidate cache: one JSON record per line, an in-memory key
//! index built at startup, no database dependency. A key is written at most
//! once; replays read, never regenerate.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::backends::Candidate;
use crate::distributions::CategorySet;
use crate::parsing::parse_output;

/// Digest identifying one generated candidate. Components are
/// length-prefixed so no two component lists collide.
pub fn cache_key(
    utterance_id: &str,
    prompt_digest: &str,
    model: &str,
    strategy: &str,
    b: usize,
    temperature: f64,
    candidate_index: usize,
) -> String {
    let mut hasher = Sha256::new();
    for part in [
        utterance_id,
        prompt_digest,
        model,
        strategy,
        &b.to_string(),
        &format!("{temperature}"),
        &candidate_index.to_string(),
    ] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// One cached candidate. The key's components are stored alongside it so
/// the log is self-describing; the parsed distribution is reconstructed
/// from `raw_text` at evaluation time rather than trusted from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub utterance_id: String,
    pub prompt_digest: String,
    pub model: String,
    pub strategy: String,
    pub b: usize,
    pub temperature: f64,
    pub candidate_index: usize,
    pub raw_text: String,
    pub log_likelihood: f64,
    pub logprobs_missing: bool,
    pub verifier_score: Option<f64>,
    pub verifier_fallback: bool,
    /// Unix seconds; fixed at 0 for the simulated backend so fresh runs
    /// produce byte-identical cache files.
    pub created_at: u64,
}

impl CacheRecord {
    /// Rebuild the in-memory [`Candidate`] this record was written from.
    pub fn to_candidate(&self, categories: &Arc<CategorySet>) -> Candidate {
        Candidate {
            index: self.candidate_index,
            parsed: parse_output(&self.raw_text, categories).distribution,
            raw_text: self.raw_text.clone(),
            log_likelihood: self.log_likelihood,
            verifier_score: self.verifier_score,
            verifier_fallback: self.verifier_fallback,
            logprobs_missing: self.logprobs_missing,
        }
    }
}

/// The record log plus its key index. All writes go through a single
/// owner; readers take a key snapshot before generation fans out.
pub struct CandidateCache {
    path: PathBuf,
    index: HashMap<String, CacheRecord>,
}

impl CandidateCache {
    /// Open (or create) the log at `dir/candidates.jsonl` and build the
    /// key index. A trailing partial line from an interrupted write is
    /// dropped; corruption anywhere else is an error.
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join("candidates.jsonl");
        let mut index = HashMap::new();
        if path.exists() {
            let io_err = |source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            };
            let file = std::fs::File::open(&path).map_err(io_err)?;
            let mut lines = BufReader::new(file).lines().enumerate().peekable();
            while let Some((idx, line)) = lines.next() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        // First write wins; a duplicate key means the same
                        // deterministic payload was re-appended.
                        index.entry(record.key.clone()).or_insert(record);
                    }
                    Err(err) if lines.peek().is_none() => {
                        eprintln!(
                            "cache: dropping partial trailing record at line {}: {err}",
                            idx + 1
                        );
                    }
                    Err(err) => {
                        return Err(HarnessError::CacheCorrupt {
                            path: path.display().to_string(),
                            line: idx + 1,
                            detail: err.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Self { path, index })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&CacheRecord> {
        self.index.get(key)
    }

    /// Snapshot of the known keys, shared read-only with workers.
    pub fn key_snapshot(&self) -> std::collections::HashSet<String> {
        self.index.keys().cloned().collect()
    }

    /// Append records in order, skipping keys already present. Returns the
    /// number actually written.
    pub fn append_all(&mut self, records: Vec<CacheRecord>) -> Result<usize, HarnessError> {
        let io_err = |source| HarnessError::Io {
            path: self.path.display().to_string(),
            source,
        };
        let fresh: Vec<CacheRecord> = records
            .into_iter()
            .filter(|r| !self.index.contains_key(&r.key))
            .collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        let mut buf = Vec::new();
        for record in &fresh {
            serde_json::to_writer(&mut buf, record)?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        let written = fresh.len();
        for record in fresh {
            self.index.insert(record.key.clone(), record);
        }
        Ok(written)
    }
}
