//! The pipeline phases behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use streamsift::analytics::{
    count_archive, count_csv, count_labeled, event_time_range, labeled_records,
    sentiment_over_time, LabelCountReport, TimeSeriesPoint,
};
use streamsift::archive::{Archive, ArchiveReader};
use streamsift::index::{SearchHit, SearchQuery};
use streamsift::ingest::{open_replay_source, IngestStats, Ingestor, RawRecord, TcpLineSource};
use streamsift::mqlog::{LogPosition, MessageLog};
use streamsift::sentiment_model::{
    evaluate, read_sentiment140, save_meta, save_model, stratified_sample, stratified_split, train,
    EvalReport, Example, ModelMeta, Sentiment140Row, TrainHistory, TrainOptions,
    MODEL_FORMAT_VERSION,
};
use streamsift::streamproc::{
    read_metrics, run_loop, MetricsSummary, MetricsWriter, RunOptions, Scorer, StopSignal,
};
use streamsift::textprep::{encode, tokenize, VocabularyBuilder};
use streamsift::RecordEnvelope;

use crate::config::{DataPaths, PipelineConfig};
use crate::error::CliError;
use crate::indexer::IndexMaintainer;

pub const ARCHIVER_GROUP: &str = "archiver";
/// Records between archive/index tee passes during a long ingest.
const TEE_EVERY: u64 = 2000;

/// Open handles on a data directory.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub log: Arc<MessageLog>,
}

impl Pipeline {
    /// Opens (creating when needed) the data directory and both topics.
    pub fn open(config: PipelineConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.data_dir).map_err(|e| {
            CliError::Source(format!(
                "cannot create data directory {}: {e}",
                config.data_dir.display()
            ))
        })?;
        let log = MessageLog::open(config.paths().mqlog())?;
        log.ensure_topic(&config.topics.raw, config.topics.raw_partitions)?;
        log.ensure_topic(&config.topics.labeled, config.topics.labeled_partitions)?;
        Ok(Self {
            config,
            log: Arc::new(log),
        })
    }

    pub fn paths(&self) -> DataPaths {
        self.config.paths()
    }

    pub fn index_maintainer(&self) -> Result<IndexMaintainer, CliError> {
        IndexMaintainer::open(
            Arc::clone(&self.log),
            &self.config.topics.raw,
            &self.config.topics.labeled,
            self.paths().index(),
        )
    }
}

pub enum IngestSource {
    /// JSON-lines replay; `speedup = f64::INFINITY` is full speed.
    File { path: PathBuf, speedup: f64 },
    /// Accepts one connection on the port (0 picks a free one, reported through `bound`).
    Tcp {
        port: u16,
        bound: Option<std::sync::mpsc::Sender<u16>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub source: String,
    pub stats: IngestStats,
    pub archived: u64,
    /// Documents in the index afterwards; absent when another component maintains it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indexed_docs: Option<u64>,
    pub elapsed_ms: u64,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = &self.stats;
        writeln!(f, "source          {}", self.source)?;
        writeln!(f, "records in      {}", s.records_in)?;
        writeln!(f, "envelopes out   {}", s.envelopes_out)?;
        writeln!(f, "parse skipped   {}", s.parse_skipped)?;
        writeln!(f, "empty dropped   {}", s.empty_dropped)?;
        writeln!(f, "dup dropped     {}", s.dup_dropped)?;
        writeln!(f, "archived        {}", self.archived)?;
        if let Some(n) = self.indexed_docs {
            writeln!(f, "indexed docs    {n}")?;
        }
        write!(
            f,
            "reconciles      {}",
            if s.reconciles() { "yes" } else { "NO" }
        )
    }
}

/// Moves unarchived envelopes from the raw topic into the archive.
pub fn archive_tee(p: &Pipeline, archive: &mut Archive) -> Result<u64, CliError> {
    let topic = &p.config.topics.raw;
    let mut moved = 0;
    loop {
        let batch = p.log.poll(ARCHIVER_GROUP, topic, 4096)?;
        if batch.is_empty() {
            return Ok(moved);
        }
        for r in &batch {
            match serde_json::from_slice::<RecordEnvelope>(&r.payload) {
                Ok(env) => {
                    archive.append(&env)?;
                    moved += 1;
                }
                Err(e) => log::warn!("not archiving undecodable record: {e}"),
            }
        }
        archive.flush()?;
        let positions: Vec<LogPosition> = batch.iter().map(|r| r.position.clone()).collect();
        p.log.commit(ARCHIVER_GROUP, &positions)?;
    }
}

struct Tees {
    archive: Archive,
    index: Option<IndexMaintainer>,
    archived: u64,
}

impl Tees {
    fn open(p: &Pipeline, index: bool) -> Result<Self, CliError> {
        Ok(Self {
            archive: Archive::open(p.paths().archive(), p.config.archive_config())?,
            index: if index {
                Some(p.index_maintainer()?)
            } else {
                None
            },
            archived: 0,
        })
    }

    fn run(&mut self, p: &Pipeline) -> Result<(), CliError> {
        p.log.flush(&p.config.topics.raw)?;
        self.archived += archive_tee(p, &mut self.archive)?;
        if let Some(index) = &mut self.index {
            index.catch_up()?;
        }
        Ok(())
    }
}

/// Ingest → log, then the archive and index tees.
pub fn ingest(p: &Pipeline, source: IngestSource) -> Result<IngestSummary, CliError> {
    ingest_with(p, source, true)
}

/// As [`ingest`]; with `index_tee` off the caller keeps the index itself
/// (e.g. `serve`, whose refresher already follows the log).
pub fn ingest_with(
    p: &Pipeline,
    source: IngestSource,
    index_tee: bool,
) -> Result<IngestSummary, CliError> {
    let started = Instant::now();
    let topic = p.config.topics.raw.clone();
    let mut ingestor = Ingestor::new(p.config.ingest.dedup_capacity);
    let mut tees = Tees::open(p, index_tee)?;
    let mut failure: Option<CliError> = None;
    let mut since_tee = 0u64;
    let mut handle = |raw: RawRecord, ingestor: &mut Ingestor, tees: &mut Tees| {
        if failure.is_some() {
            return;
        }
        if let Some(env) = ingestor.process(&raw) {
            let payload = serde_json::to_vec(&env).expect("envelope serializes");
            if let Err(e) = p.log.append(&topic, &env.doc_id, env.event_time, &payload) {
                failure = Some(e.into());
                return;
            }
        }
        since_tee += 1;
        if since_tee >= TEE_EVERY {
            since_tee = 0;
            if let Err(e) = tees.run(p) {
                failure = Some(e);
            }
        }
    };
    let source_name = match source {
        IngestSource::File { path, speedup } => {
            let mut src = open_replay_source(&path, speedup)?;
            for item in src.by_ref() {
                handle(item?, &mut ingestor, &mut tees);
            }
            ingestor.record_source_skips(src.skipped());
            path.display().to_string()
        }
        IngestSource::Tcp { port, bound } => {
            let mut src = TcpLineSource::bind(port)?;
            let actual = src.local_port()?;
            log::info!("listening on 127.0.0.1:{actual}");
            if let Some(tx) = bound {
                let _ = tx.send(actual);
            }
            src.run(|raw| handle(raw, &mut ingestor, &mut tees))?;
            ingestor.record_source_skips(src.skipped());
            format!("tcp:{actual}")
        }
    };
    if let Some(e) = failure {
        return Err(e);
    }
    tees.run(p)?;
    if let Some(index) = &mut tees.index {
        index.persist()?;
    }
    tees.archive.seal()?;
    let summary = IngestSummary {
        source: source_name,
        stats: ingestor.stats(),
        archived: tees.archived,
        indexed_docs: tees.index.as_ref().map(|i| i.index().len() as u64),
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    append_json_line(&p.paths().metrics().join("ingest.jsonl"), &summary)?;
    Ok(summary)
}

fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut line = serde_json::to_vec(value).expect("serializes");
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rows: usize,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub vocab_size: usize,
    pub history: TrainHistory,
    pub validation: EvalReport,
    pub model_dir: PathBuf,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} rows: {} train / {} validation, vocabulary {}",
            self.rows, self.train_examples, self.valid_examples, self.vocab_size
        )?;
        for e in &self.history.epochs {
            writeln!(
                f,
                "epoch {:>2}  train loss {:.4} acc {:.4}  valid loss {:.4} acc {:.4}",
                e.epoch, e.train_loss, e.train_accuracy, e.valid_loss, e.valid_accuracy
            )?;
        }
        writeln!(f)?;
        write!(f, "{}", self.validation)
    }
}

/// Reads a Sentiment140 CSV, optionally down-sampling it per class.
pub fn load_rows(
    csv: &Path,
    sample: Option<usize>,
    seed: u64,
) -> Result<Vec<Sentiment140Row>, CliError> {
    let data = read_sentiment140(csv).map_err(|e| CliError::Source(e.to_string()))?;
    if data.skipped_polarity + data.skipped_malformed > 0 {
        log::info!(
            "skipped {} rows with other polarities and {} malformed rows",
            data.skipped_polarity,
            data.skipped_malformed
        );
    }
    Ok(match sample {
        Some(n) => stratified_sample(&data, n, seed),
        None => data.rows,
    })
}

/// Builds the vocabulary from the training split, trains, and writes
/// `model.bin`, `vocab.json` and `model.meta.json` into `model_dir`.
pub fn train_model(
    config: &PipelineConfig,
    rows: &[Sentiment140Row],
    model_dir: &Path,
) -> Result<TrainSummary, CliError> {
    let labels: Vec<_> = rows.iter().map(|r| r.polarity).collect();
    let split = stratified_split(&labels, config.model.seed);
    let tokens: Vec<Vec<String>> = rows.iter().map(|r| tokenize(&r.text)).collect();
    let mut builder = VocabularyBuilder::new();
    for &i in &split.train {
        builder.add(&tokens[i]);
    }
    let vocab = builder
        .build(config.textprep.max_vocab, config.textprep.min_freq)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let hyper = config.hyperparams(vocab.size());
    let examples: Vec<Example> = tokens
        .iter()
        .zip(rows)
        .map(|(t, r)| Example {
            seq: encode(t, &vocab, hyper.seq_len),
            label: r.polarity,
        })
        .collect();
    let options = TrainOptions {
        threads: config.model.threads.max(1),
        on_epoch: None,
    };
    let outcome = train::<f32>(&examples, &hyper, &options)?;
    fs::create_dir_all(model_dir)?;
    save_model(&outcome.model, &model_dir.join("model.bin"))?;
    vocab
        .save(&model_dir.join("vocab.json"))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let meta = ModelMeta {
        format_version: MODEL_FORMAT_VERSION,
        hyper: hyper.clone(),
        history: outcome.history.clone(),
        vocab_checksum: format!("{:016x}", vocab.checksum()),
        train_examples: outcome.split.train.len(),
        valid_examples: outcome.split.valid.len(),
        validation: Some(outcome.validation),
    };
    save_meta(&meta, &model_dir.join("model.meta.json"))?;
    Ok(TrainSummary {
        rows: rows.len(),
        train_examples: outcome.split.train.len(),
        valid_examples: outcome.split.valid.len(),
        vocab_size: vocab.size(),
        history: outcome.history,
        validation: outcome.validation,
        model_dir: model_dir.to_path_buf(),
    })
}

/// Loads the model, vocabulary and sidecar, checking they belong together.
pub fn load_scorer(model_dir: &Path) -> Result<Scorer, CliError> {
    if !model_dir.join("model.bin").exists() {
        return Err(CliError::Model(format!(
            "no model at {}; run `streamsift train` first",
            model_dir.join("model.bin").display()
        )));
    }
    Ok(Scorer::load(model_dir)?)
}

pub fn evaluate_rows(scorer: &Scorer, rows: &[Sentiment140Row]) -> Result<EvalReport, CliError> {
    let seq_len = scorer.model().hyper.seq_len;
    let examples: Vec<Example> = rows
        .iter()
        .map(|r| Example {
            seq: encode(&tokenize(&r.text), scorer.vocab(), seq_len),
            label: r.polarity,
        })
        .collect();
    Ok(evaluate(scorer.model(), &examples)?)
}

pub struct StreamOptions {
    pub stop: StopSignal,
    pub max_batches: Option<u64>,
    pub until_idle: bool,
    /// Run an index maintainer alongside the loop.
    pub index: bool,
}

/// Runs the micro-batch loop until stopped; the index follows the labeled topic.
pub fn stream(p: &Pipeline, options: StreamOptions) -> Result<MetricsSummary, CliError> {
    let scorer = load_scorer(&p.paths().model_dir())?;
    let _ = fs::remove_file(p.paths().stop_file());
    let metrics_path = p.paths().stream_metrics();
    let first_batch_id = read_metrics(&metrics_path)?
        .last()
        .map_or(0, |m| m.batch_id + 1);
    let mut metrics = MetricsWriter::open(&metrics_path)?;
    let config = p.config.micro_batch();
    let run = RunOptions {
        first_batch_id,
        max_batches: options.max_batches,
        until_idle: options.until_idle,
        ..RunOptions::default()
    };
    if !options.index {
        return Ok(run_loop(
            &p.log,
            &scorer,
            &config,
            &options.stop,
            &mut metrics,
            &run,
        )?);
    }
    let mut maintainer = p.index_maintainer()?;
    let done = AtomicBool::new(false);
    let interval = Duration::from_millis(p.config.stream.interval_ms);
    std::thread::scope(|s| {
        let indexer = s.spawn(|| -> Result<(), CliError> {
            let mut last_persist = Instant::now();
            while !done.load(Ordering::SeqCst) {
                std::thread::sleep(interval.min(Duration::from_millis(250)));
                maintainer.catch_up()?;
                if last_persist.elapsed() >= Duration::from_secs(5) {
                    maintainer.persist()?;
                    last_persist = Instant::now();
                }
            }
            maintainer.catch_up()?;
            maintainer.persist()
        });
        let result = run_loop(&p.log, &scorer, &config, &options.stop, &mut metrics, &run);
        done.store(true, Ordering::SeqCst);
        let indexed = indexer.join().expect("indexer thread panicked");
        let summary = result?;
        indexed?;
        Ok(summary)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CountSource {
    Labeled,
    Archive { start: u64, end: u64 },
    Csv { path: PathBuf, dedup: bool },
}

pub fn counts(p: &Pipeline, source: &CountSource) -> Result<LabelCountReport, CliError> {
    Ok(match source {
        CountSource::Labeled => count_labeled(&p.log, &p.config.topics.labeled)?,
        CountSource::Archive { start, end } => count_archive(&p.paths().archive(), *start, *end)?,
        CountSource::Csv { path, dedup } => count_csv(path, *dedup)?,
    })
}

/// Timeline over the labeled topic; the range defaults to the data's extent.
pub fn timeline(
    p: &Pipeline,
    window_ms: u64,
    start: Option<u64>,
    end: Option<u64>,
) -> Result<Vec<TimeSeriesPoint>, CliError> {
    let records = labeled_records(&p.log, &p.config.topics.labeled)?;
    let (lo, hi) = event_time_range(&records);
    Ok(sentiment_over_time(
        &records,
        window_ms,
        start.unwrap_or(lo),
        end.unwrap_or(hi),
    )?)
}

/// Search over the persisted index plus anything logged since.
pub fn search(
    p: &Pipeline,
    query: &SearchQuery,
    k: usize,
    rebuild: bool,
) -> Result<Vec<SearchHit>, CliError> {
    let mut m = if rebuild {
        let mut m = IndexMaintainer::rebuild(
            Arc::clone(&p.log),
            &p.config.topics.raw,
            &p.config.topics.labeled,
        )?;
        let archive = p.paths().archive();
        if archive.is_dir() {
            ArchiveReader::new(archive).scan_with(0, u64::MAX, None, |env, _| m.add_raw(&env))?;
        }
        m
    } else {
        p.index_maintainer()?
    };
    m.catch_up()?;
    Ok(m.index().search(query, k))
}
