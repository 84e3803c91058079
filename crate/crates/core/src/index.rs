//! Incremental inverted index with BM25 ranking.
//!
//! ```text
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d| / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring. Ties are broken by the
//! document ordinal (insertion order), so rankings are fully deterministic.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RecordEnvelope, Sentiment};
use crate::streamproc::LabeledRecord;
use crate::textprep::tokenize;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;
pub const SNIPPET_CHARS: usize = 140;

const SNAPSHOT_MAGIC: &[u8; 4] = b"MLSI";
const SNAPSHOT_VERSION: u32 = 1;
const SNAPSHOTS_KEPT: usize = 2;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad snapshot {path}: {reason}")]
    BadSnapshot { path: PathBuf, reason: String },
}

/// A document as the index sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexDoc {
    pub doc_id: String,
    pub text: String,
    pub label: Option<Sentiment>,
}

impl From<&RecordEnvelope> for IndexDoc {
    fn from(env: &RecordEnvelope) -> Self {
        Self {
            doc_id: env.doc_id.clone(),
            text: env.text.clone(),
            label: env.label,
        }
    }
}

impl From<&LabeledRecord> for IndexDoc {
    fn from(rec: &LabeledRecord) -> Self {
        Self {
            doc_id: rec.envelope.doc_id.clone(),
            text: rec.envelope.text.clone(),
            label: Some(rec.predicted_label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexStats {
    pub doc_count: u64,
    pub total_tokens: u64,
    pub avg_doc_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Sentiment>,
}

/// Free terms plus an optional label restriction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SearchQuery {
    pub terms: String,
    pub label: Option<Sentiment>,
}

impl SearchQuery {
    pub fn new(terms: impl Into<String>) -> Self {
        Self {
            terms: terms.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Option<Sentiment>) -> Self {
        self.label = label;
        self
    }

    /// Parses `label:<positive|negative> AND <terms>`; the label clause and the
    /// `AND` keyword are both optional.
    pub fn parse(input: &str) -> Result<Self, String> {
        let mut label = None;
        let mut terms = Vec::new();
        for word in input.split_whitespace() {
            if let Some(value) = word.strip_prefix("label:") {
                if label.is_some() {
                    return Err("only one label filter is allowed".to_string());
                }
                label = Some(value.parse::<Sentiment>()?);
            } else if word != "AND" {
                terms.push(word);
            }
        }
        Ok(Self {
            terms: terms.join(" "),
            label,
        })
    }
}

#[derive(Debug, Clone)]
struct DocEntry {
    doc_id: String,
    text: String,
    label: Option<Sentiment>,
    len: u32,
    terms: Vec<String>,
    live: bool,
}

/// Mutable index. Share read-only copies through [`SharedIndex`].
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<Posting>>,
    docs: Vec<DocEntry>,
    by_id: HashMap<String, u32>,
    live_docs: u64,
    total_tokens: u64,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `doc`, replacing any earlier version with the same `doc_id`.
    pub fn index_document(&mut self, doc: IndexDoc) {
        self.remove(&doc.doc_id);
        let tokens = tokenize(&doc.text);
        let ordinal =
            u32::try_from(self.docs.len()).expect("index holds fewer than 2^32 documents");
        let mut counts: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        let mut terms: Vec<String> = Vec::with_capacity(counts.len());
        for (term, tf) in counts {
            // Ordinals only grow, so pushing keeps each list sorted.
            self.postings
                .entry(term.clone())
                .or_default()
                .push(Posting {
                    doc_ordinal: ordinal,
                    term_frequency: tf,
                });
            terms.push(term);
        }
        self.by_id.insert(doc.doc_id.clone(), ordinal);
        self.docs.push(DocEntry {
            doc_id: doc.doc_id,
            text: doc.text,
            label: doc.label,
            len: tokens.len() as u32,
            terms,
            live: true,
        });
        self.live_docs += 1;
        self.total_tokens += tokens.len() as u64;
    }

    pub fn remove(&mut self, doc_id: &str) -> bool {
        let Some(ordinal) = self.by_id.remove(doc_id) else {
            return false;
        };
        let entry = &mut self.docs[ordinal as usize];
        entry.live = false;
        for term in std::mem::take(&mut entry.terms) {
            if let Some(list) = self.postings.get_mut(&term) {
                if let Ok(i) = list.binary_search_by_key(&ordinal, |p| p.doc_ordinal) {
                    list.remove(i);
                }
                if list.is_empty() {
                    self.postings.remove(&term);
                }
            }
        }
        entry.text = String::new();
        self.live_docs -= 1;
        self.total_tokens -= u64::from(entry.len);
        true
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            doc_count: self.live_docs,
            total_tokens: self.total_tokens,
            avg_doc_len: if self.live_docs > 0 {
                self.total_tokens as f64 / self.live_docs as f64
            } else {
                0.0
            },
        }
    }

    pub fn len(&self) -> usize {
        self.live_docs as usize
    }

    pub fn is_empty(&self) -> bool {
        self.live_docs == 0
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn label_of(&self, doc_id: &str) -> Option<Sentiment> {
        self.by_id
            .get(doc_id)
            .and_then(|&o| self.docs[o as usize].label)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.by_id.get(doc_id).map(|&o| self.docs[o as usize].len)
    }

    /// Live documents in ordinal order.
    pub fn documents(&self) -> impl Iterator<Item = IndexDoc> + '_ {
        self.docs.iter().filter(|d| d.live).map(|d| IndexDoc {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
            label: d.label,
        })
    }

    pub fn count_by_label(&self) -> HashMap<Option<Sentiment>, u64> {
        let mut out = HashMap::new();
        for d in self.docs.iter().filter(|d| d.live) {
            *out.entry(d.label).or_default() += 1;
        }
        out
    }

    pub fn search(&self, query: &SearchQuery, k: usize) -> Vec<SearchHit> {
        assert!(k >= 1, "k must be at least 1");
        let mut terms = tokenize(&query.terms);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        if terms.is_empty() || self.live_docs == 0 {
            return Vec::new();
        }
        let n = self.live_docs as f64;
        let avg_len = self.total_tokens as f64 / n;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in list {
                let doc = &self.docs[p.doc_ordinal as usize];
                if query.label.is_some() && doc.label != query.label {
                    continue;
                }
                let tf = f64::from(p.term_frequency);
                let norm = K1 * (1.0 - B + B * f64::from(doc.len) / avg_len);
                *scores.entry(p.doc_ordinal).or_default() += idf * tf * (K1 + 1.0) / (tf + norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(ordinal, score)| {
                let doc = &self.docs[ordinal as usize];
                SearchHit {
                    doc_id: doc.doc_id.clone(),
                    score,
                    snippet: doc.text.chars().take(SNIPPET_CHARS).collect(),
                    label: doc.label,
                }
            })
            .collect()
    }

    /// Snapshot layout (little-endian):
    ///
    /// ```text
    /// "MLSI" | u32 version | u64 doc_count |
    /// doc_count × ( u32 id_len | id | u8 label (0 none, 1 positive, 2 negative) | u32 text_len | text )
    /// ```
    ///
    /// Documents are written in ordinal order; loading re-indexes them, which
    /// preserves relative order and therefore tie-breaks.
    pub fn write_snapshot(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(SNAPSHOT_MAGIC)?;
            w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
            w.write_all(&self.live_docs.to_le_bytes())?;
            for d in self.docs.iter().filter(|d| d.live) {
                w.write_all(&(d.doc_id.len() as u32).to_le_bytes())?;
                w.write_all(d.doc_id.as_bytes())?;
                w.write_all(&[match d.label {
                    None => 0,
                    Some(Sentiment::Positive) => 1,
                    Some(Sentiment::Negative) => 2,
                }])?;
                w.write_all(&(d.text.len() as u32).to_le_bytes())?;
                w.write_all(d.text.as_bytes())?;
            }
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self, IndexError> {
        let bad = |reason: &str| IndexError::BadSnapshot {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != SNAPSHOT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)
            .map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(count);
        let mut index = Self::new();
        for _ in 0..count {
            let doc_id = read_string(&mut r).map_err(|_| bad("truncated document"))?;
            let mut label = [0u8; 1];
            r.read_exact(&mut label)
                .map_err(|_| bad("truncated document"))?;
            let label = match label[0] {
                0 => None,
                1 => Some(Sentiment::Positive),
                2 => Some(Sentiment::Negative),
                _ => return Err(bad("bad label code")),
            };
            let text = read_string(&mut r).map_err(|_| bad("truncated document"))?;
            index.index_document(IndexDoc {
                doc_id,
                text,
                label,
            });
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(index)
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Writes `snapshot-<n>.bin` into `dir` with `n` one past the newest existing
/// snapshot, keeping only the most recent few.
pub fn save_snapshot(index: &InvertedIndex, dir: &Path) -> Result<PathBuf, IndexError> {
    fs::create_dir_all(dir)?;
    let existing = list_snapshots(dir)?;
    let next = existing.last().map_or(0, |(n, _)| n + 1);
    let path = dir.join(format!("snapshot-{next}.bin"));
    index.write_snapshot(&path)?;
    let mut all = list_snapshots(dir)?;
    while all.len() > SNAPSHOTS_KEPT {
        let (_, old) = all.remove(0);
        fs::remove_file(old)?;
    }
    Ok(path)
}

pub fn load_latest_snapshot(dir: &Path) -> Result<Option<InvertedIndex>, IndexError> {
    if !dir.is_dir() {
        return Ok(None);
    }
    match list_snapshots(dir)?.pop() {
        Some((_, path)) => InvertedIndex::read_snapshot(&path).map(Some),
        None => Ok(None),
    }
}

fn list_snapshots(dir: &Path) -> io::Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let n = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("snapshot-"))
            .and_then(|n| n.strip_suffix(".bin"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(n) = n {
            out.push((n, path));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Readers grab an immutable snapshot; the writer swaps in a new one after each batch.
#[derive(Clone, Default)]
pub struct SharedIndex {
    current: Arc<RwLock<Arc<InvertedIndex>>>,
}

impl SharedIndex {
    pub fn new(index: InvertedIndex) -> Self {
        Self {
            current: Arc::new(RwLock::new(Arc::new(index))),
        }
    }

    pub fn snapshot(&self) -> Arc<InvertedIndex> {
        self.current.read().clone()
    }

    pub fn publish(&self, index: InvertedIndex) {
        *self.current.write() = Arc::new(index);
    }
}

/// Single writer that batches mutations and publishes them to a [`SharedIndex`].
pub struct IndexWriter {
    working: InvertedIndex,
    shared: SharedIndex,
    pending: usize,
}

impl IndexWriter {
    pub fn new(shared: SharedIndex) -> Self {
        let working = (*shared.snapshot()).clone();
        Self {
            working,
            shared,
            pending: 0,
        }
    }

    pub fn index_document(&mut self, doc: IndexDoc) {
        self.working.index_document(doc);
        self.pending += 1;
    }

    /// Makes all mutations since the last publish visible to searchers.
    pub fn publish(&mut self) {
        if self.pending > 0 {
            self.shared.publish(self.working.clone());
            self.pending = 0;
        }
    }

    pub fn working(&self) -> &InvertedIndex {
        &self.working
    }
}
