//! Keeps the search index in step with the log.
//!
//! Raw envelopes are indexed as they arrive; labeled records replace them
//! with their predicted label. A raw record never overrides a document that
//! is already indexed, so replaying either topic is idempotent. Cursors live
//! in memory and are committed to the `indexer` consumer group only by
//! [`IndexMaintainer::persist`], after the snapshot is on disk.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use streamsift::index::{
    load_latest_snapshot, save_snapshot, IndexDoc, IndexWriter, InvertedIndex, SharedIndex,
};
use streamsift::mqlog::{LogPosition, MessageLog};
use streamsift::{LabeledRecord, RecordEnvelope};

use crate::error::CliError;

pub const INDEXER_GROUP: &str = "indexer";
const READ_CHUNK: usize = 4096;

pub struct IndexMaintainer {
    log: Arc<MessageLog>,
    raw_topic: String,
    labeled_topic: String,
    snapshot_dir: PathBuf,
    cursors: BTreeMap<(String, u32), u64>,
    writer: IndexWriter,
    shared: SharedIndex,
}

impl IndexMaintainer {
    /// Starts from the newest snapshot and the group's committed offsets.
    pub fn open(
        log: Arc<MessageLog>,
        raw_topic: &str,
        labeled_topic: &str,
        snapshot_dir: PathBuf,
    ) -> Result<Self, CliError> {
        let index = load_latest_snapshot(&snapshot_dir)?.unwrap_or_default();
        let group = log.group(INDEXER_GROUP);
        let mut cursors = BTreeMap::new();
        for topic in [raw_topic, labeled_topic] {
            for p in 0..log.topic(topic)?.partitions {
                let from = group
                    .committed_offset(topic, p)
                    .max(log.log_start_offset(topic, p)?);
                cursors.insert((topic.to_string(), p), from);
            }
        }
        let shared = SharedIndex::new(index);
        Ok(Self {
            writer: IndexWriter::new(shared.clone()),
            shared,
            log,
            raw_topic: raw_topic.into(),
            labeled_topic: labeled_topic.into(),
            snapshot_dir,
            cursors,
        })
    }

    /// An empty index fed from the start of both topics, ignoring snapshots
    /// and committed offsets.
    pub fn rebuild(
        log: Arc<MessageLog>,
        raw_topic: &str,
        labeled_topic: &str,
    ) -> Result<Self, CliError> {
        let mut cursors = BTreeMap::new();
        for topic in [raw_topic, labeled_topic] {
            for p in 0..log.topic(topic)?.partitions {
                cursors.insert((topic.to_string(), p), log.log_start_offset(topic, p)?);
            }
        }
        let shared = SharedIndex::default();
        Ok(Self {
            writer: IndexWriter::new(shared.clone()),
            shared,
            log,
            raw_topic: raw_topic.into(),
            labeled_topic: labeled_topic.into(),
            snapshot_dir: PathBuf::new(),
            cursors,
        })
    }

    pub fn shared(&self) -> SharedIndex {
        self.shared.clone()
    }

    pub fn index(&self) -> Arc<InvertedIndex> {
        self.shared.snapshot()
    }

    /// Adds a document directly, e.g. when rebuilding from the archive.
    pub fn add_raw(&mut self, env: &RecordEnvelope) {
        if !self.writer.working().contains(&env.doc_id) {
            self.writer.index_document(IndexDoc::from(env));
        }
    }

    /// Reads everything past the cursors and publishes the result. Returns
    /// the number of records consumed.
    pub fn catch_up(&mut self) -> Result<u64, CliError> {
        let mut consumed = 0;
        for topic in [self.raw_topic.clone(), self.labeled_topic.clone()] {
            let raw = topic == self.raw_topic;
            for p in 0..self.log.topic(&topic)?.partitions {
                loop {
                    let cursor = self
                        .cursors
                        .get_mut(&(topic.clone(), p))
                        .expect("cursor per partition");
                    let records = self.log.read(&topic, p, *cursor, READ_CHUNK)?;
                    let Some(last) = records.last() else { break };
                    *cursor = last.position.offset + 1;
                    consumed += records.len() as u64;
                    for r in &records {
                        if raw {
                            match serde_json::from_slice::<RecordEnvelope>(&r.payload) {
                                Ok(env) => self.add_raw(&env),
                                Err(e) => log::warn!("skipping undecodable raw record: {e}"),
                            }
                        } else {
                            match serde_json::from_slice::<LabeledRecord>(&r.payload) {
                                Ok(l) => self.writer.index_document(IndexDoc::from(&l)),
                                Err(e) => log::warn!("skipping undecodable labeled record: {e}"),
                            }
                        }
                    }
                }
            }
        }
        self.writer.publish();
        Ok(consumed)
    }

    /// Writes a snapshot, then commits the cursors.
    pub fn persist(&mut self) -> Result<(), CliError> {
        self.writer.publish();
        save_snapshot(&self.index(), &self.snapshot_dir)?;
        let positions: Vec<LogPosition> = self
            .cursors
            .iter()
            .filter(|(_, &next)| next > 0)
            .map(|((topic, partition), &next)| LogPosition {
                topic: topic.clone(),
                partition: *partition,
                offset: next - 1,
            })
            .collect();
        self.log.commit(INDEXER_GROUP, &positions)?;
        Ok(())
    }
}
