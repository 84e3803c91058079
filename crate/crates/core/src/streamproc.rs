//! Micro-batch scoring loop: poll the input topic, score with the LSTM, append
//! labeled records to the output topic, flush, then commit.
//!
//! Commit happens strictly after the output is durable, so a crash anywhere in
//! a batch re-delivers it (at-least-once). Downstream consumers dedup by
//! `doc_id`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RecordEnvelope, Sentiment};
use crate::mqlog::{LogPosition, MessageLog, MqError};
use crate::sentiment_model::{forward, load_meta, load_model, LstmModel, ModelError};
use crate::textprep::{encode, tokenize, TextprepError, Vocabulary};

pub const DEFAULT_INTERVAL_MS: u64 = 1000;
pub const DEFAULT_MAX_BATCH: usize = 4096;
pub const MIN_INTERVAL_MS: u64 = 10;
pub const RETRY_BASE: Duration = Duration::from_millis(100);
pub const RETRY_CAP: Duration = Duration::from_secs(5);

/// A scored document. Serializes as the envelope's fields plus the scoring fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub envelope: RecordEnvelope,
    pub predicted_label: Sentiment,
    pub probability: f64,
    pub scored_at: u64,
    pub batch_id: u64,
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("vocabulary error: {0}")]
    Vocab(#[from] TextprepError),
    #[error(transparent)]
    Log(#[from] MqError),
    #[error("metrics io error: {0}")]
    Metrics(#[from] std::io::Error),
    #[error("processor killed after emitting batch {batch_id}")]
    Killed { batch_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroBatchConfig {
    pub interval_ms: u64,
    pub max_batch: usize,
    pub input_topic: String,
    pub output_topic: String,
    pub group_id: String,
    /// Restrict polling to these input partitions; all when `None`.
    pub partitions: Option<Vec<u32>>,
    /// Scoring threads per batch.
    pub threads: usize,
}

impl Default for MicroBatchConfig {
    fn default() -> Self {
        Self {
            interval_ms: DEFAULT_INTERVAL_MS,
            max_batch: DEFAULT_MAX_BATCH,
            input_topic: "tweets".into(),
            output_topic: "labeled".into(),
            group_id: "streamproc".into(),
            partitions: None,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl MicroBatchConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.interval_ms < MIN_INTERVAL_MS {
            return Err(StreamError::Config(format!(
                "interval_ms must be at least {MIN_INTERVAL_MS}, got {}",
                self.interval_ms
            )));
        }
        if self.max_batch == 0 {
            return Err(StreamError::Config("max_batch must be at least 1".into()));
        }
        if self.input_topic == self.output_topic {
            return Err(StreamError::Config(
                "input and output topics must differ".into(),
            ));
        }
        Ok(())
    }
}

/// Model plus the vocabulary it was trained with.
pub struct Scorer {
    model: LstmModel<f32>,
    vocab: Vocabulary,
}

impl Scorer {
    /// Fails when `expected_checksum` is given and differs from the vocabulary's.
    pub fn new(
        model: LstmModel<f32>,
        vocab: Vocabulary,
        expected_checksum: Option<u64>,
    ) -> Result<Self, StreamError> {
        if model.hyper.vocab_size != vocab.size() {
            return Err(StreamError::Config(format!(
                "model expects a vocabulary of {} ids but vocab.json has {}",
                model.hyper.vocab_size,
                vocab.size()
            )));
        }
        if let Some(expected) = expected_checksum {
            if expected != vocab.checksum() {
                return Err(StreamError::Config(format!(
                    "vocabulary checksum {:016x} does not match the model's {:016x}; retrain or use the matching vocab.json",
                    vocab.checksum(),
                    expected
                )));
            }
        }
        Ok(Self { model, vocab })
    }

    /// Loads `model.bin`, `vocab.json` and `model.meta.json` from `model_dir`.
    pub fn load(model_dir: &Path) -> Result<Self, StreamError> {
        let model = load_model(&model_dir.join("model.bin"))?;
        let vocab = Vocabulary::load(&model_dir.join("vocab.json"))?;
        let meta = load_meta(&model_dir.join("model.meta.json"))?;
        let expected = u64::from_str_radix(&meta.vocab_checksum, 16).map_err(|_| {
            StreamError::Config(format!(
                "bad vocab checksum {:?} in model.meta.json",
                meta.vocab_checksum
            ))
        })?;
        Self::new(model, vocab, Some(expected))
    }

    pub fn model(&self) -> &LstmModel<f32> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// tokenize → encode → forward.
    pub fn probability(&self, text: &str) -> f32 {
        let seq = encode(&tokenize(text), &self.vocab, self.model.hyper.seq_len);
        let (p, _) = forward(&self.model, &seq).expect("encode yields in-range ids");
        p
    }

    pub fn label(&self, env: RecordEnvelope, batch_id: u64, scored_at: u64) -> LabeledRecord {
        let probability = f64::from(self.probability(&env.text));
        LabeledRecord {
            envelope: env,
            predicted_label: Sentiment::from_probability(probability),
            probability,
            scored_at,
            batch_id,
        }
    }
}

/// Scores `batch` on up to `threads` threads. Output order matches input order.
pub fn score_batch(
    scorer: &Scorer,
    batch: Vec<RecordEnvelope>,
    batch_id: u64,
    scored_at: u64,
    threads: usize,
) -> Vec<LabeledRecord> {
    let threads = threads.max(1);
    if threads == 1 || batch.len() < 2 * threads {
        return batch
            .into_iter()
            .map(|e| scorer.label(e, batch_id, scored_at))
            .collect();
    }
    let chunk = batch.len().div_ceil(threads);
    let mut parts: Vec<Vec<RecordEnvelope>> = Vec::with_capacity(threads);
    let mut rest = batch;
    while rest.len() > chunk {
        let tail = rest.split_off(chunk);
        parts.push(rest);
        rest = tail;
    }
    parts.push(rest);
    std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|part| {
                s.spawn(move || {
                    part.into_iter()
                        .map(|e| scorer.label(e, batch_id, scored_at))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_id: u64,
    pub started_at: u64,
    pub records: usize,
    /// Input records that were not valid envelopes; committed and dropped.
    pub undecodable: usize,
    pub poll_ms: f64,
    pub score_ms: f64,
    pub emit_ms: f64,
    pub commit_ms: f64,
    pub total_ms: f64,
    /// Uncommitted input records after this batch.
    pub lag: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub batches: u64,
    pub non_empty_batches: u64,
    pub records: u64,
    pub undecodable: u64,
    pub last_batch_id: Option<u64>,
    /// Percentiles of `total_ms` over non-empty batches.
    pub p50_total_ms: f64,
    pub p99_total_ms: f64,
    pub max_total_ms: f64,
    pub max_lag: u64,
}

/// Nearest-rank percentile; 0 for an empty slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

impl MetricsSummary {
    pub fn from_batches(batches: &[BatchMetrics]) -> Self {
        let totals: Vec<f64> = batches
            .iter()
            .filter(|b| b.records > 0)
            .map(|b| b.total_ms)
            .collect();
        Self {
            batches: batches.len() as u64,
            non_empty_batches: totals.len() as u64,
            records: batches.iter().map(|b| b.records as u64).sum(),
            undecodable: batches.iter().map(|b| b.undecodable as u64).sum(),
            last_batch_id: batches.last().map(|b| b.batch_id),
            p50_total_ms: percentile(&totals, 50.0),
            p99_total_ms: percentile(&totals, 99.0),
            max_total_ms: totals.iter().copied().fold(0.0, f64::max),
            max_lag: batches.iter().map(|b| b.lag).max().unwrap_or(0),
        }
    }
}

/// Appends [`BatchMetrics`] as JSON lines.
pub struct MetricsWriter {
    file: Option<File>,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Some(file) })
    }

    pub fn disabled() -> Self {
        Self { file: None }
    }

    pub fn write(&mut self, m: &BatchMetrics) -> std::io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_vec(m).expect("metrics serialize");
            line.push(b'\n');
            f.write_all(&line)?;
        }
        Ok(())
    }
}

/// Reads a metrics file, ignoring a torn last line.
pub fn read_metrics(path: &Path) -> std::io::Result<Vec<BatchMetrics>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        if let Ok(m) = serde_json::from_str(&line?) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Set by an OS interrupt handler, or by the presence of a control file.
#[derive(Debug, Clone, Default)]
pub struct StopSignal {
    flag: Arc<AtomicBool>,
    control_file: Option<PathBuf>,
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_control_file(path: impl Into<PathBuf>) -> Self {
        Self {
            flag: Arc::default(),
            control_file: Some(path.into()),
        }
    }

    pub fn flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.flag)
    }

    pub fn stop(&self) {
        self.flag.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.flag.load(Ordering::SeqCst) || self.control_file.as_ref().is_some_and(|p| p.exists())
    }

    /// Sleeps up to `d`, returning early (with `true`) once stopped.
    pub fn sleep(&self, d: Duration) -> bool {
        let until = Instant::now() + d;
        loop {
            if self.is_stopped() {
                return true;
            }
            let now = Instant::now();
            if now >= until {
                return false;
            }
            std::thread::sleep((until - now).min(Duration::from_millis(20)));
        }
    }
}

/// Test hooks for crash injection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KillPoint {
    #[default]
    Never,
    /// Abort after the output of this batch is flushed, before its commit.
    BeforeCommit { batch_id: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub first_batch_id: u64,
    /// Stop after this many batches (empty ones included).
    pub max_batches: Option<u64>,
    /// Stop once a poll returns nothing.
    pub until_idle: bool,
    pub kill_point: KillPoint,
}

/// Retries `op` on transient log errors with exponential backoff. Gives up
/// with the last error once `stop` is set.
fn with_retry<T>(
    stop: &StopSignal,
    mut op: impl FnMut() -> Result<T, MqError>,
) -> Result<T, MqError> {
    let mut delay = RETRY_BASE;
    loop {
        match op() {
            Err(e) if e.is_transient() => {
                log::warn!("transient log error, retrying in {delay:?}: {e}");
                if stop.sleep(delay) {
                    return Err(e);
                }
                delay = (delay * 2).min(RETRY_CAP);
            }
            other => return other,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// One poll-score-emit-commit cycle.
pub fn run_batch(
    log: &MessageLog,
    scorer: &Scorer,
    config: &MicroBatchConfig,
    batch_id: u64,
    stop: &StopSignal,
    kill_point: KillPoint,
) -> Result<BatchMetrics, StreamError> {
    let started_at = crate::now_millis();
    let t0 = Instant::now();
    let records = with_retry(stop, || match &config.partitions {
        Some(parts) => log.poll_partitions(
            &config.group_id,
            &config.input_topic,
            parts,
            config.max_batch,
        ),
        None => log.poll(&config.group_id, &config.input_topic, config.max_batch),
    })?;
    let t_poll = t0.elapsed();

    let mut envelopes = Vec::with_capacity(records.len());
    let mut undecodable = 0;
    for r in &records {
        match serde_json::from_slice::<RecordEnvelope>(&r.payload) {
            Ok(env) => envelopes.push(env),
            Err(e) => {
                undecodable += 1;
                log::warn!(
                    "dropping undecodable record {}/{}@{}: {e}",
                    r.position.topic,
                    r.position.partition,
                    r.position.offset
                );
            }
        }
    }
    let labeled = score_batch(
        scorer,
        envelopes,
        batch_id,
        crate::now_millis(),
        config.threads,
    );
    let t_score = t0.elapsed();

    if !labeled.is_empty() {
        let payloads: Vec<Vec<u8>> = labeled
            .iter()
            .map(|l| serde_json::to_vec(l).expect("labeled record serializes"))
            .collect();
        with_retry(stop, || {
            for (l, p) in labeled.iter().zip(&payloads) {
                log.append(
                    &config.output_topic,
                    &l.envelope.doc_id,
                    l.envelope.event_time,
                    p,
                )?;
            }
            log.flush(&config.output_topic)
        })?;
    }
    let t_emit = t0.elapsed();

    if kill_point == (KillPoint::BeforeCommit { batch_id }) && !records.is_empty() {
        return Err(StreamError::Killed { batch_id });
    }
    let positions: Vec<LogPosition> = records.iter().map(|r| r.position.clone()).collect();
    with_retry(stop, || log.commit(&config.group_id, &positions))?;
    let t_commit = t0.elapsed();
    let lag = with_retry(stop, || log.lag(&config.group_id, &config.input_topic))?;

    Ok(BatchMetrics {
        batch_id,
        started_at,
        records: labeled.len(),
        undecodable,
        poll_ms: ms(t_poll),
        score_ms: ms(t_score - t_poll),
        emit_ms: ms(t_emit - t_score),
        commit_ms: ms(t_commit - t_emit),
        total_ms: ms(t_commit),
        lag,
    })
}

/// Runs batches every `interval_ms` until `stop` is set (the in-flight batch
/// always completes) or a [`RunOptions`] limit is reached.
pub fn run_loop(
    log: &MessageLog,
    scorer: &Scorer,
    config: &MicroBatchConfig,
    stop: &StopSignal,
    metrics: &mut MetricsWriter,
    options: &RunOptions,
) -> Result<MetricsSummary, StreamError> {
    config.validate()?;
    log.topic(&config.input_topic)?;
    log.topic(&config.output_topic)?;
    let interval = Duration::from_millis(config.interval_ms);
    let mut all = Vec::new();
    let mut batch_id = options.first_batch_id;
    let mut next_tick = Instant::now();
    while !stop.is_stopped() {
        let m = run_batch(log, scorer, config, batch_id, stop, options.kill_point)?;
        metrics.write(&m)?;
        log::debug!(
            "batch {} scored {} records in {:.1} ms",
            m.batch_id,
            m.records,
            m.total_ms
        );
        let idle = m.records == 0 && m.undecodable == 0;
        all.push(m);
        batch_id += 1;
        if options.max_batches.is_some_and(|n| all.len() as u64 >= n)
            || (options.until_idle && idle)
        {
            break;
        }
        next_tick += interval;
        let now = Instant::now();
        if next_tick <= now {
            // Behind schedule: start the next batch immediately.
            next_tick = now;
        } else if stop.sleep(next_tick - now) {
            break;
        }
    }
    Ok(MetricsSummary::from_batches(&all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentiment_model::LstmHyperparams;
    use crate::textprep::build_vocabulary;

    fn scorer() -> Scorer {
        let texts = ["good day", "bad day", "good good", "awful bad"];
        let vocab = build_vocabulary(texts.iter().flat_map(|t| tokenize(t)), 100, 1).unwrap();
        let hyper = LstmHyperparams {
            vocab_size: vocab.size(),
            embed_dim: 4,
            hidden_dim: 3,
            seq_len: 8,
            ..LstmHyperparams::default()
        };
        let model = LstmModel::init(&hyper).unwrap();
        let checksum = vocab.checksum();
        Scorer::new(model, vocab, Some(checksum)).unwrap()
    }

    fn env(id: &str, t: u64, text: &str) -> RecordEnvelope {
        RecordEnvelope {
            doc_id: id.into(),
            event_time: t,
            text: text.into(),
            author: None,
            label: None,
        }
    }

    #[test]
    fn score_batch_preserves_order() {
        let s = scorer();
        assert!(score_batch(&s, vec![], 1, 0, 4).is_empty());
        let batch: Vec<_> = (0..50)
            .map(|i| env(&format!("d{i}"), i, "good day"))
            .collect();
        for threads in [1, 3] {
            let out = score_batch(&s, batch.clone(), 7, 5, threads);
            assert_eq!(out.len(), 50);
            for (i, l) in out.iter().enumerate() {
                assert_eq!(l.envelope.doc_id, format!("d{i}"));
                assert_eq!(l.batch_id, 7);
                assert_eq!(
                    l.predicted_label == Sentiment::Positive,
                    l.probability >= 0.5
                );
            }
        }
    }

    #[test]
    fn scoring_matches_direct_forward() {
        let s = scorer();
        let text = "good day awful";
        let seq = encode(&tokenize(text), s.vocab(), 8);
        let (p, _) = forward(s.model(), &seq).unwrap();
        let l = s.label(env("x", 1, text), 0, 0);
        assert_eq!(l.probability.to_bits(), f64::from(p).to_bits());
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let s = scorer();
        let vocab = s.vocab().clone();
        let bad = vocab.checksum() ^ 1;
        let err = Scorer::new(s.model().clone(), vocab, Some(bad))
            .err()
            .unwrap();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn labeled_record_json_is_flat() {
        let l = scorer().label(env("a", 3, "good"), 2, 9);
        let v: serde_json::Value = serde_json::to_value(&l).unwrap();
        assert_eq!(v["doc_id"], "a");
        assert_eq!(v["batch_id"], 2);
        let back: LabeledRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn config_validation() {
        let mut c = MicroBatchConfig::default();
        assert!(c.validate().is_ok());
        c.interval_ms = 9;
        assert!(c.validate().is_err());
        c.interval_ms = 10;
        c.max_batch = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 99.0), 0.0);
    }

    fn setup(dir: &Path, n: usize) -> MessageLog {
        let log = MessageLog::open(dir.join("mqlog")).unwrap();
        log.create_topic("tweets", 2).unwrap();
        log.create_topic("labeled", 2).unwrap();
        for i in 0..n {
            let e = env(
                &format!("d{i}"),
                i as u64 + 1,
                if i % 2 == 0 { "good day" } else { "bad day" },
            );
            log.append(
                "tweets",
                &e.doc_id,
                e.event_time,
                &serde_json::to_vec(&e).unwrap(),
            )
            .unwrap();
        }
        log
    }

    fn fast_config() -> MicroBatchConfig {
        MicroBatchConfig {
            interval_ms: 100,
            max_batch: 100,
            threads: 1,
            ..MicroBatchConfig::default()
        }
    }

    #[test]
    fn ten_records_then_empty_batch() {
        let dir = tempfile::tempdir().unwrap();
        let log = setup(dir.path(), 10);
        let s = scorer();
        let metrics_path = dir.path().join("metrics/streamproc.jsonl");
        let mut w = MetricsWriter::open(&metrics_path).unwrap();
        let opts = RunOptions {
            max_batches: Some(2),
            ..RunOptions::default()
        };
        let summary =
            run_loop(&log, &s, &fast_config(), &StopSignal::new(), &mut w, &opts).unwrap();
        let m = read_metrics(&metrics_path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].records, 10);
        assert_eq!(m[1].records, 0);
        assert_eq!(m[0].lag, 0);
        assert!(m[0].batch_id < m[1].batch_id);
        assert_eq!(summary.records, 10);
        assert_eq!(
            log.high_watermarks("labeled").unwrap().iter().sum::<u64>(),
            10
        );
    }

    #[test]
    fn kill_before_commit_redelivers() {
        let dir = tempfile::tempdir().unwrap();
        let log = setup(dir.path(), 6);
        let s = scorer();
        let cfg = fast_config();
        let err = run_batch(
            &log,
            &s,
            &cfg,
            0,
            &StopSignal::new(),
            KillPoint::BeforeCommit { batch_id: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, StreamError::Killed { batch_id: 0 }));
        assert_eq!(log.lag("streamproc", "tweets").unwrap(), 6);
        let m = run_batch(&log, &s, &cfg, 1, &StopSignal::new(), KillPoint::Never).unwrap();
        assert_eq!(m.records, 6);
        assert_eq!(m.lag, 0);
        // every record was emitted twice; each doc_id appears exactly twice
        let mut ids = Vec::new();
        log.for_each_record("labeled", |r| {
            let l: LabeledRecord = serde_json::from_slice(&r.payload).unwrap();
            ids.push(l.envelope.doc_id);
        })
        .unwrap();
        assert_eq!(ids.len(), 12);
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn stop_signal_and_control_file() {
        let dir = tempfile::tempdir().unwrap();
        let ctl = dir.path().join("stop");
        let s = StopSignal::with_control_file(&ctl);
        assert!(!s.is_stopped());
        fs::write(&ctl, b"").unwrap();
        assert!(s.is_stopped());
        let s2 = StopSignal::new();
        s2.stop();
        assert!(s2.sleep(Duration::from_secs(5)));
        let log = setup(dir.path(), 3);
        let summary = run_loop(
            &log,
            &scorer(),
            &fast_config(),
            &s2,
            &mut MetricsWriter::disabled(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(summary.batches, 0);
    }

    #[test]
    fn undecodable_records_are_committed_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let log = setup(dir.path(), 2);
        log.append("tweets", "junk", 5, b"not json").unwrap();
        let m = run_batch(
            &log,
            &scorer(),
            &fast_config(),
            0,
            &StopSignal::new(),
            KillPoint::Never,
        )
        .unwrap();
        assert_eq!(m.records, 2);
        assert_eq!(m.undecodable, 1);
        assert_eq!(m.lag, 0);
    }
}
