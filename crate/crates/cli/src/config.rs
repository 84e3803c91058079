//! Pipeline configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.
//!
//! ```toml
//! data_dir = "streamsift-data"
//!
//! [topics]
//! raw = "tweets"
//! raw_partitions = 4
//! labeled = "labeled"
//! labeled_partitions = 4
//!
//! [ingest]
//! dedup_capacity = 100000
//!
//! [archive]
//! segment_bytes = 134217728
//! segment_span_ms = 21600000
//! compress = false
//!
//! [textprep]
//! seq_len = 40
//! max_vocab = 20000
//! min_freq = 2
//!
//! [model]
//! embed_dim = 64
//! hidden_dim = 64
//! batch_size = 256
//! epochs = 3
//! learning_rate = 0.001
//! clip_norm = 5.0
//! seed = 42
//! threads = 1
//!
//! [stream]
//! interval_ms = 1000
//! max_batch = 4096
//! group = "streamproc"
//! threads = 0          # 0 = one per core
//!
//! [serve]
//! port = 8140
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streamsift::archive::{ArchiveConfig, DEFAULT_SEGMENT_BYTES, DEFAULT_SEGMENT_SPAN_MS};
use streamsift::sentiment_model::LstmHyperparams;
use streamsift::streamproc::{MicroBatchConfig, DEFAULT_INTERVAL_MS, DEFAULT_MAX_BATCH};
use streamsift::textprep::{DEFAULT_MAX_VOCAB, DEFAULT_MIN_FREQ, DEFAULT_SEQ_LEN};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub topics: TopicsConfig,
    pub ingest: IngestConfig,
    pub archive: ArchiveSection,
    pub textprep: TextprepConfig,
    pub model: ModelConfig,
    pub stream: StreamConfig,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub raw: String,
    pub raw_partitions: u32,
    pub labeled: String,
    pub labeled_partitions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub dedup_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchiveSection {
    pub segment_bytes: u64,
    pub segment_span_ms: u64,
    pub compress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextprepConfig {
    pub seq_len: usize,
    pub max_vocab: usize,
    pub min_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub interval_ms: u64,
    pub max_batch: usize,
    pub group: String,
    /// Scoring threads; 0 means one per available core.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub port: u16,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("streamsift-data"),
            topics: TopicsConfig::default(),
            ingest: IngestConfig::default(),
            archive: ArchiveSection::default(),
            textprep: TextprepConfig::default(),
            model: ModelConfig::default(),
            stream: StreamConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            raw: "tweets".into(),
            raw_partitions: 4,
            labeled: "labeled".into(),
            labeled_partitions: 4,
        }
    }
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            dedup_capacity: 100_000,
        }
    }
}

impl Default for ArchiveSection {
    fn default() -> Self {
        Self {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            segment_span_ms: DEFAULT_SEGMENT_SPAN_MS,
            compress: false,
        }
    }
}

impl Default for TextprepConfig {
    fn default() -> Self {
        Self {
            seq_len: DEFAULT_SEQ_LEN,
            max_vocab: DEFAULT_MAX_VOCAB,
            min_freq: DEFAULT_MIN_FREQ,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = LstmHyperparams::default();
        Self {
            embed_dim: h.embed_dim,
            hidden_dim: h.hidden_dim,
            batch_size: h.batch_size,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            clip_norm: h.clip_norm,
            seed: h.seed,
            threads: 1,
        }
    }
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            interval_ms: DEFAULT_INTERVAL_MS,
            max_batch: DEFAULT_MAX_BATCH,
            group: "streamproc".into(),
            threads: 0,
        }
    }
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { port: 8140 }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn paths(&self) -> DataPaths {
        DataPaths {
            root: self.data_dir.clone(),
        }
    }

    pub fn archive_config(&self) -> ArchiveConfig {
        ArchiveConfig {
            segment_bytes: self.archive.segment_bytes,
            segment_span_ms: self.archive.segment_span_ms,
            compress: self.archive.compress,
        }
    }

    /// Hyperparameters for a vocabulary of `vocab_size` ids.
    pub fn hyperparams(&self, vocab_size: usize) -> LstmHyperparams {
        LstmHyperparams {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            seq_len: self.textprep.seq_len,
            batch_size: self.model.batch_size,
            epochs: self.model.epochs,
            learning_rate: self.model.learning_rate,
            clip_norm: self.model.clip_norm,
            seed: self.model.seed,
        }
    }

    pub fn micro_batch(&self) -> MicroBatchConfig {
        let defaults = MicroBatchConfig::default();
        MicroBatchConfig {
            interval_ms: self.stream.interval_ms,
            max_batch: self.stream.max_batch,
            input_topic: self.topics.raw.clone(),
            output_topic: self.topics.labeled.clone(),
            group_id: self.stream.group.clone(),
            partitions: None,
            threads: if self.stream.threads == 0 {
                defaults.threads
            } else {
                self.stream.threads
            },
        }
    }
}

/// Locations under the data directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub root: PathBuf,
}

impl DataPaths {
    pub fn mqlog(&self) -> PathBuf {
        self.root.join("mqlog")
    }

    pub fn archive(&self) -> PathBuf {
        self.root.join("archive")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn stream_metrics(&self) -> PathBuf {
        self.metrics().join("streamproc.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn stop_file(&self) -> PathBuf {
        self.root.join("control").join("stop")
    }
}
