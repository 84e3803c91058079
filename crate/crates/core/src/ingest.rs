//! Record sources, JSON field extraction and duplicate suppression.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{fnv1a64, hex64};

pub const DEFAULT_DEDUP_CAPACITY: usize = 100_000;

/// Binary sentiment class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
        }
    }

    /// 1 for positive, 0 for negative.
    pub fn target(self) -> u8 {
        match self {
            Sentiment::Positive => 1,
            Sentiment::Negative => 0,
        }
    }

    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Unparsed record as it arrives from a source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub source_id: String,
    pub arrival_time: u64,
    pub payload: Vec<u8>,
}

/// A document flowing through every pipeline level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub doc_id: String,
    pub event_time: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Sentiment>,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("cannot read source {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("speedup must be positive, got {0}")]
    InvalidSpeedup(f64),
    #[error("socket error: {0}")]
    Socket(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("payload is not a JSON object: {0}")]
    Extraction(String),
    #[error("record {doc_id} has empty text")]
    EmptyText { doc_id: String },
}

/// Replays a JSON-lines file, pacing records by their recorded `timestamp`
/// gaps divided by `speedup`. An infinite speedup disables pacing.
pub struct ReplaySource {
    source_id: String,
    lines: io::Lines<BufReader<File>>,
    speedup: f64,
    started: Option<(Instant, u64)>,
    last_arrival: u64,
    skipped: u64,
    failed: bool,
}

/// Opens `path` for replay. `speedup = f64::INFINITY` replays at full speed.
pub fn open_replay_source(path: &Path, speedup: f64) -> Result<ReplaySource, SourceError> {
    if !(speedup > 0.0) {
        return Err(SourceError::InvalidSpeedup(speedup));
    }
    let file = File::open(path).map_err(|source| SourceError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ReplaySource {
        source_id: path.display().to_string(),
        lines: BufReader::new(file).lines(),
        speedup,
        started: None,
        last_arrival: 0,
        skipped: 0,
        failed: false,
    })
}

impl ReplaySource {
    /// Lines dropped because they were not valid JSON objects.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn pace(&mut self, recorded: u64) {
        if self.speedup.is_infinite() {
            return;
        }
        let (start, base) = *self.started.get_or_insert((Instant::now(), recorded));
        let offset_ms = recorded.saturating_sub(base) as f64 / self.speedup;
        let due = start + Duration::from_secs_f64(offset_ms / 1000.0);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

impl Iterator for ReplaySource {
    type Item = Result<RawRecord, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    self.skipped += 1;
                    continue;
                }
                Err(source) => {
                    self.failed = true;
                    return Some(Err(SourceError::Unreadable {
                        path: PathBuf::from(&self.source_id),
                        source,
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let Ok(object) =
                serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
            else {
                self.skipped += 1;
                continue;
            };
            let recorded = object.get("timestamp").and_then(serde_json::Value::as_u64);
            if let Some(ts) = recorded {
                self.pace(ts);
            }
            // Non-decreasing replay clock: lines without a timestamp inherit the last one.
            let arrival = recorded
                .unwrap_or(self.last_arrival)
                .max(self.last_arrival)
                .max(1);
            self.last_arrival = arrival;
            return Some(Ok(RawRecord {
                source_id: self.source_id.clone(),
                arrival_time: arrival,
                payload: line.into_bytes(),
            }));
        }
    }
}

/// Line source on a TCP port. Accepts a single connection and ends when the
/// peer closes it.
pub struct TcpLineSource {
    listener: TcpListener,
    skipped: u64,
}

impl TcpLineSource {
    pub fn bind(port: u16) -> Result<Self, SourceError> {
        Ok(Self {
            listener: TcpListener::bind(("127.0.0.1", port))?,
            skipped: 0,
        })
    }

    pub fn local_port(&self) -> Result<u16, SourceError> {
        Ok(self.listener.local_addr()?.port())
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Blocks until a peer connects, then hands every valid JSON line to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(RawRecord)) -> Result<u64, SourceError> {
        let (stream, peer) = self.listener.accept()?;
        let source_id = format!("tcp:{peer}");
        let mut delivered = 0;
        let mut last = 0;
        for line in BufReader::new(stream).lines() {
            let line = match line {
                Ok(l) => l,
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    self.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if line.trim().is_empty() {
                continue;
            }
            if serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line).is_err() {
                self.skipped += 1;
                continue;
            }
            last = crate::now_millis().max(last);
            sink(RawRecord {
                source_id: source_id.clone(),
                arrival_time: last,
                payload: line.into_bytes(),
            });
            delivered += 1;
        }
        Ok(delivered)
    }
}

#[derive(Deserialize)]
struct WireRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    timestamp: Option<u64>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    user: Option<String>,
    #[serde(default)]
    label: Option<Sentiment>,
}

/// Maps a raw JSON payload onto an envelope.
///
/// `id` becomes `doc_id` (a payload hash when absent), `timestamp` becomes
/// `event_time` (arrival time when absent), `user` becomes `author`.
pub fn extract(raw: &RawRecord) -> Result<RecordEnvelope, ExtractError> {
    let object: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&raw.payload)
            .map_err(|e| ExtractError::Extraction(e.to_string()))?;
    let wire = WireRecord::deserialize(serde_json::Value::Object(object))
        .map_err(|e| ExtractError::Extraction(e.to_string()))?;
    let doc_id = match wire.id {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => format!("h{}", hex64(fnv1a64(&raw.payload))),
    };
    let text = wire.text.unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ExtractError::EmptyText { doc_id });
    }
    Ok(RecordEnvelope {
        doc_id,
        event_time: wire
            .timestamp
            .filter(|&t| t > 0)
            .unwrap_or(raw.arrival_time)
            .max(1),
        text,
        author: wire.user,
        label: wire.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupDecision {
    Keep,
    Drop,
}

/// Bounded FIFO set of content fingerprints.
#[derive(Debug, Clone)]
pub struct DedupState {
    seen: HashSet<u64>,
    order: VecDeque<u64>,
    capacity: usize,
    evictions: u64,
}

impl DedupState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "dedup capacity must be at least 1");
        Self {
            seen: HashSet::with_capacity(capacity.min(1 << 16)),
            order: VecDeque::new(),
            capacity,
            evictions: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }
}

/// Lowercases and collapses runs of whitespace to a single space.
pub fn normalize_for_fingerprint(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn fingerprint(text: &str) -> u64 {
    fnv1a64(normalize_for_fingerprint(text).as_bytes())
}

pub fn dedup(env: &RecordEnvelope, state: &mut DedupState) -> DedupDecision {
    let fp = fingerprint(&env.text);
    if state.seen.contains(&fp) {
        return DedupDecision::Drop;
    }
    if state.seen.len() == state.capacity {
        if let Some(oldest) = state.order.pop_front() {
            state.seen.remove(&oldest);
            state.evictions += 1;
        }
    }
    state.seen.insert(fp);
    state.order.push_back(fp);
    DedupDecision::Keep
}

/// Per-run counters. `records_in` always equals
/// `envelopes_out + parse_skipped + empty_dropped + dup_dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records_in: u64,
    pub envelopes_out: u64,
    pub parse_skipped: u64,
    pub empty_dropped: u64,
    pub dup_dropped: u64,
    pub fake_news_checked: u64,
}

impl IngestStats {
    pub fn reconciles(&self) -> bool {
        self.records_in
            == self.envelopes_out + self.parse_skipped + self.empty_dropped + self.dup_dropped
    }
}

/// Extraction, fake-news screening (a pass-through for now) and dedup for one source.
pub struct Ingestor {
    dedup: DedupState,
    stats: IngestStats,
}

impl Ingestor {
    pub fn new(dedup_capacity: usize) -> Self {
        Self {
            dedup: DedupState::new(dedup_capacity),
            stats: IngestStats::default(),
        }
    }

    /// Counts lines the source itself rejected as malformed.
    pub fn record_source_skips(&mut self, n: u64) {
        self.stats.records_in += n;
        self.stats.parse_skipped += n;
    }

    pub fn process(&mut self, raw: &RawRecord) -> Option<RecordEnvelope> {
        self.stats.records_in += 1;
        let env = match extract(raw) {
            Ok(env) => env,
            Err(ExtractError::Extraction(_)) => {
                self.stats.parse_skipped += 1;
                return None;
            }
            Err(ExtractError::EmptyText { .. }) => {
                self.stats.empty_dropped += 1;
                return None;
            }
        };
        // No detector is specified for fake news; the stage only counts.
        self.stats.fake_news_checked += 1;
        match dedup(&env, &mut self.dedup) {
            DedupDecision::Drop => {
                self.stats.dup_dropped += 1;
                None
            }
            DedupDecision::Keep => {
                self.stats.envelopes_out += 1;
                Some(env)
            }
        }
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn dedup_state(&self) -> &DedupState {
        &self.dedup
    }
}
