//! Embedded partitioned append-only message log.
//!
//! Layout under the log root:
//!
//! ```text
//! <root>/<topic>/topic.json
//! <root>/<topic>/<partition>/segment-<base_offset>.log
//! <root>/groups/<group_id>.json
//! ```
//!
//! Each record is `[u32 payload_len][u64 offset][u64 event_time][payload]`,
//! little-endian. A sparse in-memory index keeps one `(offset, file_pos)` entry
//! every `index_interval` records and is rebuilt by scanning on open, which is
//! also where a torn tail left by a crash gets truncated.
//!
//! Delivery is at-least-once: [`MessageLog::poll`] never moves a group's
//! committed offsets, only [`MessageLog::commit`] does.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

pub const RECORD_HEADER_LEN: u64 = 20;
pub const DEFAULT_SEGMENT_BYTES: u64 = 64 * 1024 * 1024;
pub const DEFAULT_INDEX_INTERVAL: u64 = 4096;

const TOPIC_META: &str = "topic.json";
const GROUPS_DIR: &str = "groups";
const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Error)]
pub enum MqError {
    #[error("topic {0} already exists")]
    TopicExists(String),
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("topic {topic} has no partition {partition}")]
    UnknownPartition { topic: String, partition: u32 },
    #[error("invalid name {0:?}: use letters, digits, '.', '_' or '-'")]
    InvalidName(String),
    #[error("a topic needs at least one partition")]
    InvalidPartitions,
    #[error("cannot commit {topic}/{partition}@{offset}: high watermark is {high_watermark}")]
    InvalidCommit {
        topic: String,
        partition: u32,
        offset: u64,
        high_watermark: u64,
    },
    #[error("log at {0} is open in another process")]
    Locked(PathBuf),
    #[error("corrupt log data in {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("log io error: {0}")]
    Io(#[from] io::Error),
}

impl MqError {
    /// IO failures may succeed on retry; everything else is a caller error.
    pub fn is_transient(&self) -> bool {
        matches!(self, MqError::Io(_))
    }
}

pub type Result<T, E = MqError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub partitions: u32,
    #[serde(default)]
    pub retention_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogPosition {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub position: LogPosition,
    pub event_time: u64,
    pub payload: Vec<u8>,
}

/// A named reader's committed offsets, per topic and partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerGroup {
    pub group_id: String,
    pub committed: BTreeMap<String, BTreeMap<u32, u64>>,
}

impl ConsumerGroup {
    pub fn committed_offset(&self, topic: &str, partition: u32) -> u64 {
        self.committed
            .get(topic)
            .and_then(|m| m.get(&partition))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogConfig {
    pub segment_bytes: u64,
    pub index_interval: u64,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            index_interval: DEFAULT_INDEX_INTERVAL,
        }
    }
}

/// Stable key-to-partition mapping: FNV-1a 64 of the key bytes, modulo the partition count.
pub fn partition_for(key: &str, partitions: u32) -> u32 {
    (fnv1a64(key.as_bytes()) % u64::from(partitions)) as u32
}

fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name != GROUPS_DIR
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(MqError::InvalidName(name.to_string()))
    }
}

fn segment_name(base_offset: u64) -> String {
    format!("segment-{base_offset:020}.log")
}

struct Segment {
    base_offset: u64,
    next_offset: u64,
    path: PathBuf,
    file: File,
    size: u64,
    index: Vec<(u64, u64)>,
}

impl Segment {
    fn create(dir: &Path, base_offset: u64) -> Result<Self> {
        let path = dir.join(segment_name(base_offset));
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        Ok(Self {
            base_offset,
            next_offset: base_offset,
            path,
            file,
            size: 0,
            index: Vec::new(),
        })
    }

    /// Scans an existing segment, rebuilding the sparse index. A torn or
    /// inconsistent tail is truncated away.
    fn recover(path: PathBuf, base_offset: u64, index_interval: u64) -> Result<Self> {
        let file = OpenOptions::new().read(true).append(true).open(&path)?;
        let len = file.metadata()?.len();
        let mut pos = 0u64;
        let mut expected = base_offset;
        let mut index = Vec::new();
        let mut header = [0u8; RECORD_HEADER_LEN as usize];
        while pos + RECORD_HEADER_LEN <= len {
            file.read_exact_at(&mut header, pos)?;
            let (payload_len, offset, _) = decode_header(&header);
            let end = pos + RECORD_HEADER_LEN + u64::from(payload_len);
            if offset != expected || end > len {
                break;
            }
            if (offset - base_offset) % index_interval == 0 {
                index.push((offset, pos));
            }
            expected += 1;
            pos = end;
        }
        if pos < len {
            log::warn!(
                "truncating {} bytes of torn tail in {}",
                len - pos,
                path.display()
            );
            file.set_len(pos)?;
        }
        Ok(Self {
            base_offset,
            next_offset: expected,
            path,
            file,
            size: pos,
            index,
        })
    }

    fn append(&mut self, event_time: u64, payload: &[u8], index_interval: u64) -> Result<u64> {
        let offset = self.next_offset;
        let payload_len = u32::try_from(payload.len()).map_err(|_| {
            MqError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                "payload larger than 4 GiB",
            ))
        })?;
        let mut buf = Vec::with_capacity(RECORD_HEADER_LEN as usize + payload.len());
        buf.extend_from_slice(&payload_len.to_le_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&event_time.to_le_bytes());
        buf.extend_from_slice(payload);
        // One write per record so readers never observe half a record.
        self.file.write_all(&buf)?;
        if (offset - self.base_offset) % index_interval == 0 {
            self.index.push((offset, self.size));
        }
        self.size += buf.len() as u64;
        self.next_offset += 1;
        Ok(offset)
    }

    fn read(
        &self,
        topic: &str,
        partition: u32,
        from: u64,
        max: usize,
        out: &mut Vec<LogRecord>,
    ) -> Result<()> {
        let start = match self.index.binary_search_by_key(&from, |&(o, _)| o) {
            Ok(i) => self.index[i],
            Err(0) => (self.base_offset, 0),
            Err(i) => self.index[i - 1],
        };
        let (mut offset, mut pos) = start;
        let mut header = [0u8; RECORD_HEADER_LEN as usize];
        let target = out.len() + max;
        while offset < self.next_offset && out.len() < target {
            self.file.read_exact_at(&mut header, pos)?;
            let (payload_len, stored, event_time) = decode_header(&header);
            if stored != offset {
                return Err(MqError::Corrupt {
                    path: self.path.clone(),
                    reason: format!("expected offset {offset}, found {stored}"),
                });
            }
            let body = pos + RECORD_HEADER_LEN;
            if offset >= from {
                let mut payload = vec![0u8; payload_len as usize];
                self.file.read_exact_at(&mut payload, body)?;
                out.push(LogRecord {
                    position: LogPosition {
                        topic: topic.to_string(),
                        partition,
                        offset,
                    },
                    event_time,
                    payload,
                });
            }
            pos = body + u64::from(payload_len);
            offset += 1;
        }
        Ok(())
    }
}

fn decode_header(h: &[u8; RECORD_HEADER_LEN as usize]) -> (u32, u64, u64) {
    let len = u32::from_le_bytes(h[0..4].try_into().unwrap());
    let offset = u64::from_le_bytes(h[4..12].try_into().unwrap());
    let event_time = u64::from_le_bytes(h[12..20].try_into().unwrap());
    (len, offset, event_time)
}

struct PartitionLog {
    dir: PathBuf,
    segments: Vec<Segment>,
    dirty: bool,
}

impl PartitionLog {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        let segment = Segment::create(&dir, 0)?;
        Ok(Self {
            dir,
            segments: vec![segment],
            dirty: false,
        })
    }

    fn recover(dir: PathBuf, index_interval: u64) -> Result<Self> {
        let mut bases = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(base) = name
                .strip_prefix("segment-")
                .and_then(|s| s.strip_suffix(".log"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                bases.push(base);
            }
        }
        bases.sort_unstable();
        let mut segments: Vec<Segment> = Vec::with_capacity(bases.len());
        for base in bases {
            if let Some(prev) = segments.last() {
                if prev.next_offset != base {
                    return Err(MqError::Corrupt {
                        path: dir.clone(),
                        reason: format!(
                            "gap before segment {base}: previous ends at {}",
                            prev.next_offset
                        ),
                    });
                }
            }
            segments.push(Segment::recover(
                dir.join(segment_name(base)),
                base,
                index_interval,
            )?);
        }
        if segments.is_empty() {
            segments.push(Segment::create(&dir, 0)?);
        }
        Ok(Self {
            dir,
            segments,
            dirty: false,
        })
    }

    fn high_watermark(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.next_offset)
    }

    fn log_start(&self) -> u64 {
        self.segments.first().map_or(0, |s| s.base_offset)
    }

    fn size_bytes(&self) -> u64 {
        self.segments.iter().map(|s| s.size).sum()
    }

    fn append(
        &mut self,
        event_time: u64,
        payload: &[u8],
        config: &LogConfig,
        retention: Option<u64>,
    ) -> Result<u64> {
        let active = self
            .segments
            .last()
            .expect("partition has an active segment");
        if active.size > 0
            && active.size + RECORD_HEADER_LEN + payload.len() as u64 > config.segment_bytes
        {
            let base = active.next_offset;
            active.file.sync_data()?;
            self.segments.push(Segment::create(&self.dir, base)?);
            if let Some(limit) = retention {
                self.enforce_retention(limit)?;
            }
        }
        let offset =
            self.segments
                .last_mut()
                .unwrap()
                .append(event_time, payload, config.index_interval)?;
        self.dirty = true;
        Ok(offset)
    }

    /// Drops whole sealed segments, oldest first, while the partition is over `limit` bytes.
    fn enforce_retention(&mut self, limit: u64) -> Result<()> {
        while self.segments.len() > 1 && self.size_bytes() > limit {
            let old = self.segments.remove(0);
            fs::remove_file(&old.path)?;
        }
        Ok(())
    }

    fn read(&self, topic: &str, partition: u32, from: u64, max: usize) -> Result<Vec<LogRecord>> {
        let mut out = Vec::new();
        let from = from.max(self.log_start());
        let first = self.segments.partition_point(|s| s.next_offset <= from);
        for segment in &self.segments[first..] {
            if out.len() >= max {
                break;
            }
            segment.read(topic, partition, from, max - out.len(), &mut out)?;
        }
        Ok(out)
    }

    fn flush(&mut self) -> Result<()> {
        if self.dirty {
            self.segments.last().unwrap().file.sync_data()?;
            self.dirty = false;
        }
        Ok(())
    }
}

struct TopicLog {
    meta: Topic,
    partitions: Vec<Mutex<PartitionLog>>,
}

impl TopicLog {
    fn partition(&self, partition: u32) -> Result<&Mutex<PartitionLog>> {
        self.partitions
            .get(partition as usize)
            .ok_or_else(|| MqError::UnknownPartition {
                topic: self.meta.name.clone(),
                partition,
            })
    }
}

/// Handle to a log directory. Cheap to share behind an `Arc`; producers on
/// different partitions do not contend.
pub struct MessageLog {
    root: PathBuf,
    config: LogConfig,
    topics: RwLock<BTreeMap<String, Arc<TopicLog>>>,
    groups: Mutex<BTreeMap<String, ConsumerGroup>>,
    // Held for the lifetime of the handle; released when the file closes.
    _lock: File,
}

impl MessageLog {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::open_with(root, LogConfig::default())
    }

    /// Opens (or creates) the log at `root`, recovering every topic and group found there.
    pub fn open_with(root: impl Into<PathBuf>, config: LogConfig) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(GROUPS_DIR))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(MqError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut topics = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let meta_path = entry.path().join(TOPIC_META);
            if !meta_path.is_file() {
                continue;
            }
            let meta: Topic =
                serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| MqError::Corrupt {
                    path: meta_path.clone(),
                    reason: e.to_string(),
                })?;
            let mut partitions = Vec::with_capacity(meta.partitions as usize);
            for p in 0..meta.partitions {
                let dir = entry.path().join(p.to_string());
                let log = if dir.is_dir() {
                    PartitionLog::recover(dir, config.index_interval)?
                } else {
                    PartitionLog::create(dir)?
                };
                partitions.push(Mutex::new(log));
            }
            topics.insert(meta.name.clone(), Arc::new(TopicLog { meta, partitions }));
        }
        let mut groups = BTreeMap::new();
        for entry in fs::read_dir(root.join(GROUPS_DIR))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let group: ConsumerGroup =
                serde_json::from_slice(&fs::read(&path)?).map_err(|e| MqError::Corrupt {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            groups.insert(group.group_id.clone(), group);
        }
        Ok(Self {
            root,
            config,
            topics: RwLock::new(topics),
            groups: Mutex::new(groups),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_topic(&self, name: &str, partitions: u32) -> Result<Topic> {
        self.create_topic_with(name, partitions, None)
    }

    pub fn create_topic_with(
        &self,
        name: &str,
        partitions: u32,
        retention_bytes: Option<u64>,
    ) -> Result<Topic> {
        validate_name(name)?;
        if partitions == 0 {
            return Err(MqError::InvalidPartitions);
        }
        let mut topics = self.topics.write();
        if topics.contains_key(name) {
            return Err(MqError::TopicExists(name.to_string()));
        }
        let meta = Topic {
            name: name.to_string(),
            partitions,
            retention_bytes,
        };
        let dir = self.root.join(name);
        fs::create_dir_all(&dir)?;
        let parts = (0..partitions)
            .map(|p| PartitionLog::create(dir.join(p.to_string())).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        write_atomic(
            &dir.join(TOPIC_META),
            &serde_json::to_vec_pretty(&meta).unwrap(),
        )?;
        topics.insert(
            name.to_string(),
            Arc::new(TopicLog {
                meta: meta.clone(),
                partitions: parts,
            }),
        );
        Ok(meta)
    }

    /// Creates the topic unless it already exists; returns its metadata either way.
    pub fn ensure_topic(&self, name: &str, partitions: u32) -> Result<Topic> {
        match self.create_topic(name, partitions) {
            Err(MqError::TopicExists(_)) => self.topic(name),
            other => other,
        }
    }

    pub fn topic(&self, name: &str) -> Result<Topic> {
        Ok(self.topic_log(name)?.meta.clone())
    }

    pub fn topics(&self) -> Vec<Topic> {
        self.topics
            .read()
            .values()
            .map(|t| t.meta.clone())
            .collect()
    }

    fn topic_log(&self, name: &str) -> Result<Arc<TopicLog>> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| MqError::UnknownTopic(name.to_string()))
    }

    /// Appends to partition `partition_for(key)`; the record becomes visible to
    /// readers immediately and durable at the next [`flush`](Self::flush).
    pub fn append(
        &self,
        topic: &str,
        key: &str,
        event_time: u64,
        payload: &[u8],
    ) -> Result<LogPosition> {
        let t = self.topic_log(topic)?;
        let partition = partition_for(key, t.meta.partitions);
        let offset = t.partition(partition)?.lock().append(
            event_time,
            payload,
            &self.config,
            t.meta.retention_bytes,
        )?;
        Ok(LogPosition {
            topic: topic.to_string(),
            partition,
            offset,
        })
    }

    pub fn flush(&self, topic: &str) -> Result<()> {
        let t = self.topic_log(topic)?;
        for p in &t.partitions {
            p.lock().flush()?;
        }
        Ok(())
    }

    pub fn flush_all(&self) -> Result<()> {
        let topics: Vec<_> = self.topics.read().values().cloned().collect();
        for t in topics {
            for p in &t.partitions {
                p.lock().flush()?;
            }
        }
        Ok(())
    }

    pub fn high_watermark(&self, topic: &str, partition: u32) -> Result<u64> {
        Ok(self
            .topic_log(topic)?
            .partition(partition)?
            .lock()
            .high_watermark())
    }

    pub fn high_watermarks(&self, topic: &str) -> Result<Vec<u64>> {
        let t = self.topic_log(topic)?;
        Ok(t.partitions
            .iter()
            .map(|p| p.lock().high_watermark())
            .collect())
    }

    pub fn log_start_offset(&self, topic: &str, partition: u32) -> Result<u64> {
        Ok(self
            .topic_log(topic)?
            .partition(partition)?
            .lock()
            .log_start())
    }

    /// Reads up to `max` records of one partition starting at `from`,
    /// independent of any consumer group.
    pub fn read(
        &self,
        topic: &str,
        partition: u32,
        from: u64,
        max: usize,
    ) -> Result<Vec<LogRecord>> {
        self.topic_log(topic)?
            .partition(partition)?
            .lock()
            .read(topic, partition, from, max)
    }

    /// Visits every retained record of `topic`, partition by partition.
    pub fn for_each_record(&self, topic: &str, mut f: impl FnMut(LogRecord)) -> Result<()> {
        const CHUNK: usize = 4096;
        let t = self.topic_log(topic)?;
        for partition in 0..t.meta.partitions {
            let mut from = 0;
            loop {
                let chunk = self.read(topic, partition, from, CHUNK)?;
                let Some(last) = chunk.last() else { break };
                from = last.position.offset + 1;
                chunk.into_iter().for_each(&mut f);
            }
        }
        Ok(())
    }

    pub fn group(&self, group_id: &str) -> ConsumerGroup {
        self.groups
            .lock()
            .get(group_id)
            .cloned()
            .unwrap_or_else(|| ConsumerGroup {
                group_id: group_id.to_string(),
                committed: BTreeMap::new(),
            })
    }

    /// Up to `max_records` uncommitted records for `group`, interleaved
    /// round-robin across partitions. Committed offsets are not advanced.
    pub fn poll(&self, group_id: &str, topic: &str, max_records: usize) -> Result<Vec<LogRecord>> {
        let partitions: Vec<u32> = (0..self.topic_log(topic)?.meta.partitions).collect();
        self.poll_partitions(group_id, topic, &partitions, max_records)
    }

    /// [`poll`](Self::poll) restricted to a subset of partitions, for running
    /// several consumers of one group over disjoint partitions.
    pub fn poll_partitions(
        &self,
        group_id: &str,
        topic: &str,
        partitions: &[u32],
        max_records: usize,
    ) -> Result<Vec<LogRecord>> {
        validate_name(group_id)?;
        let t = self.topic_log(topic)?;
        let group = self.group(group_id);
        let mut per_partition = Vec::with_capacity(partitions.len());
        for &p in partitions {
            let from = group.committed_offset(topic, p);
            let records = t.partition(p)?.lock().read(topic, p, from, max_records)?;
            per_partition.push(records.into_iter());
        }
        let mut out = Vec::with_capacity(max_records.min(1024));
        let mut exhausted = 0;
        while out.len() < max_records && exhausted < per_partition.len() {
            exhausted = 0;
            for records in per_partition.iter_mut() {
                if out.len() == max_records {
                    break;
                }
                match records.next() {
                    Some(r) => out.push(r),
                    None => exhausted += 1,
                }
            }
        }
        Ok(out)
    }

    /// Marks `positions` processed: the group's next poll of each partition
    /// starts right after the highest committed position. Durable on return.
    pub fn commit(&self, group_id: &str, positions: &[LogPosition]) -> Result<()> {
        validate_name(group_id)?;
        let mut next: BTreeMap<(&str, u32), u64> = BTreeMap::new();
        for pos in positions {
            let hw = self.high_watermark(&pos.topic, pos.partition)?;
            if pos.offset >= hw {
                return Err(MqError::InvalidCommit {
                    topic: pos.topic.clone(),
                    partition: pos.partition,
                    offset: pos.offset,
                    high_watermark: hw,
                });
            }
            let e = next.entry((pos.topic.as_str(), pos.partition)).or_insert(0);
            *e = (*e).max(pos.offset + 1);
        }
        if next.is_empty() {
            return Ok(());
        }
        let mut groups = self.groups.lock();
        let group = groups
            .entry(group_id.to_string())
            .or_insert_with(|| ConsumerGroup {
                group_id: group_id.to_string(),
                committed: BTreeMap::new(),
            });
        for ((topic, partition), offset) in next {
            group
                .committed
                .entry(topic.to_string())
                .or_default()
                .insert(partition, offset);
        }
        let path = self.root.join(GROUPS_DIR).join(format!("{group_id}.json"));
        write_atomic(&path, &serde_json::to_vec_pretty(group).unwrap())?;
        Ok(())
    }

    /// Records of `topic` not yet committed by `group`.
    pub fn lag(&self, group_id: &str, topic: &str) -> Result<u64> {
        let t = self.topic_log(topic)?;
        let group = self.group(group_id);
        let mut lag = 0;
        for (p, part) in t.partitions.iter().enumerate() {
            let part = part.lock();
            let from = group
                .committed_offset(topic, p as u32)
                .max(part.log_start());
            lag += part.high_watermark().saturating_sub(from);
        }
        Ok(lag)
    }
}

impl Drop for MessageLog {
    fn drop(&mut self) {
        if let Err(e) = self.flush_all() {
            log::warn!("flush on close failed: {e}");
        }
    }
}

/// Replaces `path` with `bytes` via a synced temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(dir: &Path) -> MessageLog {
        MessageLog::open(dir.join("mqlog")).unwrap()
    }

    #[test]
    fn create_topic_starts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        let t = log.create_topic("tweets", 4).unwrap();
        assert_eq!(t.partitions, 4);
        assert_eq!(log.high_watermarks("tweets").unwrap(), vec![0; 4]);
        assert!(matches!(
            log.create_topic("tweets", 4),
            Err(MqError::TopicExists(_))
        ));
        assert!(matches!(
            log.create_topic("x", 0),
            Err(MqError::InvalidPartitions)
        ));
        assert!(matches!(
            log.create_topic("../x", 1),
            Err(MqError::InvalidName(_))
        ));
    }

    #[test]
    fn topic_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        open(dir.path()).create_topic("t", 1).unwrap();
        let log = open(dir.path());
        assert_eq!(
            log.topics()
                .iter()
                .map(|t| t.name.as_str())
                .collect::<Vec<_>>(),
            ["t"]
        );
    }

    #[test]
    fn first_append_is_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        log.create_topic("t", 1).unwrap();
        let pos = log.append("t", "k", 1, b"x").unwrap();
        assert_eq!((pos.partition, pos.offset), (0, 0));
        assert!(matches!(
            log.append("nope", "k", 1, b"x"),
            Err(MqError::UnknownTopic(_))
        ));
    }

    #[test]
    fn same_key_same_partition_gapless() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        log.create_topic("t", 4).unwrap();
        let positions: Vec<_> = (0..3)
            .map(|i| log.append("t", "key", i, b"v").unwrap())
            .collect();
        assert!(positions
            .iter()
            .all(|p| p.partition == positions[0].partition));
        assert_eq!(
            positions.iter().map(|p| p.offset).collect::<Vec<_>>(),
            [0, 1, 2]
        );
        assert_eq!(positions[0].partition, partition_for("key", 4));
    }

    #[test]
    fn poll_does_not_advance_until_commit() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        log.create_topic("t", 1).unwrap();
        for i in 0..5u64 {
            log.append("t", "k", i, &i.to_le_bytes()).unwrap();
        }
        let offs = |v: Vec<LogRecord>| v.iter().map(|r| r.position.offset).collect::<Vec<_>>();
        assert_eq!(offs(log.poll("g", "t", 3).unwrap()), [0, 1, 2]);
        assert_eq!(offs(log.poll("g", "t", 3).unwrap()), [0, 1, 2]);
        let batch = log.poll("g", "t", 2).unwrap();
        log.commit("g", &[batch[1].position.clone()]).unwrap();
        assert_eq!(offs(log.poll("g", "t", 3).unwrap()), [2, 3, 4]);
        assert_eq!(log.lag("g", "t").unwrap(), 3);
        // another group is unaffected
        assert_eq!(offs(log.poll("other", "t", 1).unwrap()), [0]);
    }

    #[test]
    fn commit_beyond_watermark_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        log.create_topic("t", 1).unwrap();
        log.append("t", "k", 1, b"a").unwrap();
        let bad = LogPosition {
            topic: "t".into(),
            partition: 0,
            offset: 1,
        };
        assert!(matches!(
            log.commit("g", &[bad]),
            Err(MqError::InvalidCommit { .. })
        ));
        let ok = LogPosition {
            topic: "t".into(),
            partition: 0,
            offset: 0,
        };
        log.commit("g", &[ok]).unwrap();
        assert!(log.poll("g", "t", 10).unwrap().is_empty());
    }

    #[test]
    fn poll_round_robins_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let log = open(dir.path());
        log.create_topic("t", 2).unwrap();
        let mut keys = [None, None];
        for i in 0.. {
            let k = format!("k{i}");
            let p = partition_for(&k, 2) as usize;
            keys[p].get_or_insert(k);
            if keys.iter().all(Option::is_some) {
                break;
            }
        }
        let [k0, k1] = keys.map(Option::unwrap);
        for i in 0..3 {
            log.append("t", &k0, i, b"a").unwrap();
        }
        log.append("t", &k1, 9, b"b").unwrap();
        let got: Vec<_> = log
            .poll("g", "t", 10)
            .unwrap()
            .into_iter()
            .map(|r| (r.position.partition, r.position.offset))
            .collect();
        assert_eq!(got, [(0, 0), (1, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn segments_roll_and_reads_cross_them() {
        let dir = tempfile::tempdir().unwrap();
        let config = LogConfig {
            segment_bytes: 200,
            index_interval: 3,
        };
        let log = MessageLog::open_with(dir.path(), config).unwrap();
        log.create_topic("t", 1).unwrap();
        for i in 0..50u64 {
            log.append("t", "k", i, format!("payload-{i}").as_bytes())
                .unwrap();
        }
        let segs = fs::read_dir(dir.path().join("t/0")).unwrap().count();
        assert!(segs > 5, "{segs} segments");
        let recs = log.read("t", 0, 17, 20).unwrap();
        assert_eq!(recs.len(), 20);
        for (i, r) in recs.iter().enumerate() {
            let o = 17 + i as u64;
            assert_eq!(r.position.offset, o);
            assert_eq!(r.event_time, o);
            assert_eq!(r.payload, format!("payload-{o}").as_bytes());
        }
        drop(log);
        let log = MessageLog::open_with(dir.path(), config).unwrap();
        assert_eq!(log.high_watermark("t", 0).unwrap(), 50);
        assert_eq!(log.read("t", 0, 48, 10).unwrap().len(), 2);
    }

    #[test]
    fn retention_drops_oldest_segments() {
        let dir = tempfile::tempdir().unwrap();
        let log = MessageLog::open_with(
            dir.path(),
            LogConfig {
                segment_bytes: 100,
                index_interval: 2,
            },
        )
        .unwrap();
        log.create_topic_with("t", 1, Some(250)).unwrap();
        for i in 0..40u64 {
            log.append("t", "k", i, b"0123456789").unwrap();
        }
        let start = log.log_start_offset("t", 0).unwrap();
        assert!(start > 0);
        let recs = log.poll("g", "t", 100).unwrap();
        assert_eq!(recs[0].position.offset, start);
        assert_eq!(recs.last().unwrap().position.offset, 39);
        assert_eq!(log.lag("g", "t").unwrap(), 40 - start);
    }

    #[test]
    fn torn_tail_is_truncated_on_recovery() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = MessageLog::open(dir.path()).unwrap();
            log.create_topic("t", 1).unwrap();
            for i in 0..3u64 {
                log.append("t", "k", i, b"abc").unwrap();
            }
        }
        let seg = dir.path().join("t/0").join(segment_name(0));
        let mut f = OpenOptions::new().append(true).open(&seg).unwrap();
        f.write_all(&[7, 0, 0, 0, 3, 0]).unwrap();
        drop(f);
        let log = MessageLog::open(dir.path()).unwrap();
        assert_eq!(log.high_watermark("t", 0).unwrap(), 3);
        let pos = log.append("t", "k", 9, b"new").unwrap();
        assert_eq!(pos.offset, 3);
        assert_eq!(log.read("t", 0, 3, 1).unwrap()[0].payload, b"new");
    }

    #[test]
    fn on_disk_record_layout() {
        let dir = tempfile::tempdir().unwrap();
        let log = MessageLog::open(dir.path()).unwrap();
        log.create_topic("t", 1).unwrap();
        log.append("t", "k", 0x0102, b"hi").unwrap();
        log.flush("t").unwrap();
        let bytes = fs::read(dir.path().join("t/0/segment-00000000000000000000.log")).unwrap();
        let mut expected = vec![2, 0, 0, 0];
        expected.extend_from_slice(&0u64.to_le_bytes());
        expected.extend_from_slice(&0x0102u64.to_le_bytes());
        expected.extend_from_slice(b"hi");
        assert_eq!(bytes, expected);
    }

    #[test]
    fn second_handle_on_same_root_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let first = open(dir.path());
        assert!(matches!(
            MessageLog::open(dir.path().join("mqlog")),
            Err(MqError::Locked(_))
        ));
        drop(first);
        open(dir.path());
    }

    #[test]
    fn commits_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = MessageLog::open(dir.path()).unwrap();
            log.create_topic("t", 1).unwrap();
            for i in 0..4u64 {
                log.append("t", "k", i, b"x").unwrap();
            }
            let recs = log.poll("g", "t", 2).unwrap();
            log.commit("g", &[recs[1].position.clone()]).unwrap();
        }
        let log = MessageLog::open(dir.path()).unwrap();
        assert_eq!(log.group("g").committed_offset("t", 0), 2);
        assert!(dir.path().join("groups/g.json").is_file());
        assert_eq!(log.poll("g", "t", 10).unwrap()[0].position.offset, 2);
    }
}
