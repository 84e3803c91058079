//! Label counts and sentiment timelines over the archive, the labeled topic
//! or a Sentiment140 CSV, with CSV and JSON export.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{ArchiveError, ArchiveReader};
use crate::ingest::{fingerprint, Sentiment};
use crate::mqlog::{MessageLog, MqError};
use crate::sentiment_model::{open_sentiment140, scan_sentiment140, Sentiment140Error};
use crate::streamproc::LabeledRecord;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("cannot read source: {0}")]
    Source(String),
    #[error("window length must be positive")]
    InvalidWindow,
    #[error("invalid time range [{start}, {end})")]
    InvalidRange { start: u64, end: u64 },
    #[error("report io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ArchiveError> for QueryError {
    fn from(e: ArchiveError) -> Self {
        QueryError::Source(e.to_string())
    }
}

impl From<MqError> for QueryError {
    fn from(e: MqError) -> Self {
        QueryError::Source(e.to_string())
    }
}

impl From<Sentiment140Error> for QueryError {
    fn from(e: Sentiment140Error) -> Self {
        QueryError::Source(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub category: String,
    pub number: u64,
    /// Share of the total in percent, rounded to one decimal.
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCountReport {
    pub rows: Vec<LabelCount>,
    pub total: u64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn category(label: Sentiment) -> &'static str {
    match label {
        Sentiment::Positive => "Positive",
        Sentiment::Negative => "Negative",
    }
}

impl LabelCountReport {
    /// Rows in the order Positive, Negative; no rows when both are zero.
    pub fn from_counts(positive: u64, negative: u64) -> Self {
        let total = positive + negative;
        let rows = if total == 0 {
            Vec::new()
        } else {
            [
                (Sentiment::Positive, positive),
                (Sentiment::Negative, negative),
            ]
            .into_iter()
            .map(|(label, n)| LabelCount {
                category: category(label).to_string(),
                number: n,
                percentage: round1(100.0 * n as f64 / total as f64),
            })
            .collect()
        };
        Self { rows, total }
    }

    pub fn number(&self, label: Sentiment) -> u64 {
        self.rows
            .iter()
            .find(|r| r.category == category(label))
            .map_or(0, |r| r.number)
    }

    /// Fixed-width text table with a Total row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>12} {:>10}\n", "Category", "Number", "Percentage");
        for r in &self.rows {
            out += &format!(
                "{:<10} {:>12} {:>9.1}%\n",
                r.category, r.number, r.percentage
            );
        }
        let total_pct = if self.total == 0 { 0.0 } else { 100.0 };
        out += &format!("{:<10} {:>12} {:>9.1}%\n", "Total", self.total, total_pct);
        out
    }
}

/// Counts the known labels of archived envelopes with `event_time` in `[start, end)`.
/// Envelopes without a label are not counted.
pub fn count_archive(dir: &Path, start: u64, end: u64) -> Result<LabelCountReport, QueryError> {
    if !dir.is_dir() {
        return Err(QueryError::Source(format!(
            "archive directory {} does not exist",
            dir.display()
        )));
    }
    let (mut pos, mut neg) = (0, 0);
    ArchiveReader::new(dir).scan_with(start, end, None, |env, _| match env.label {
        Some(Sentiment::Positive) => pos += 1,
        Some(Sentiment::Negative) => neg += 1,
        None => {}
    })?;
    Ok(LabelCountReport::from_counts(pos, neg))
}

/// Every labeled record in `topic`, one per `doc_id` (the latest emission
/// wins), ordered by `(event_time, doc_id)`.
pub fn labeled_records(log: &MessageLog, topic: &str) -> Result<Vec<LabeledRecord>, QueryError> {
    let mut latest: HashMap<String, LabeledRecord> = HashMap::new();
    let mut bad = 0u64;
    log.for_each_record(topic, |r| {
        match serde_json::from_slice::<LabeledRecord>(&r.payload) {
            Ok(l) => {
                latest.insert(l.envelope.doc_id.clone(), l);
            }
            Err(_) => bad += 1,
        }
    })?;
    if bad > 0 {
        log::warn!("{bad} undecodable records in topic {topic}");
    }
    let mut out: Vec<LabeledRecord> = latest.into_values().collect();
    out.sort_by(|a, b| {
        (a.envelope.event_time, &a.envelope.doc_id)
            .cmp(&(b.envelope.event_time, &b.envelope.doc_id))
    });
    Ok(out)
}

/// Predicted-label counts over a labeled topic, deduplicated by `doc_id`.
pub fn count_labeled(log: &MessageLog, topic: &str) -> Result<LabelCountReport, QueryError> {
    Ok(count_records(&labeled_records(log, topic)?))
}

pub fn count_records(records: &[LabeledRecord]) -> LabelCountReport {
    let pos = records
        .iter()
        .filter(|r| r.predicted_label == Sentiment::Positive)
        .count() as u64;
    LabelCountReport::from_counts(pos, records.len() as u64 - pos)
}

/// Polarity counts of a Sentiment140 CSV. With `dedup_text`, rows whose
/// normalized text was already seen are not counted.
pub fn count_csv(path: &Path, dedup_text: bool) -> Result<LabelCountReport, QueryError> {
    let (mut pos, mut neg) = (0, 0);
    let mut seen = HashSet::new();
    scan_sentiment140(open_sentiment140(path)?, |row| {
        if dedup_text && !seen.insert(fingerprint(&row.text)) {
            return;
        }
        match row.polarity {
            Sentiment::Positive => pos += 1,
            Sentiment::Negative => neg += 1,
        }
    })?;
    Ok(LabelCountReport::from_counts(pos, neg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPoint {
    pub window_start: u64,
    pub window_len: u64,
    pub positive_count: u64,
    pub negative_count: u64,
    pub mean_probability: f64,
}

/// Tumbling windows of `window_len` aligned to `start`, over records with
/// `event_time` in `[start, end)`. Empty windows are omitted.
pub fn sentiment_over_time(
    records: &[LabeledRecord],
    window_len: u64,
    start: u64,
    end: u64,
) -> Result<Vec<TimeSeriesPoint>, QueryError> {
    if window_len == 0 {
        return Err(QueryError::InvalidWindow);
    }
    if start > end {
        return Err(QueryError::InvalidRange { start, end });
    }
    // window index -> (positive, negative, probability sum)
    let mut windows: BTreeMap<u64, (u64, u64, f64)> = BTreeMap::new();
    for r in records {
        let t = r.envelope.event_time;
        if t < start || t >= end {
            continue;
        }
        let w = windows.entry((t - start) / window_len).or_default();
        match r.predicted_label {
            Sentiment::Positive => w.0 += 1,
            Sentiment::Negative => w.1 += 1,
        }
        w.2 += r.probability;
    }
    Ok(windows
        .into_iter()
        .map(|(i, (p, n, sum))| TimeSeriesPoint {
            window_start: start + i * window_len,
            window_len,
            positive_count: p,
            negative_count: n,
            mean_probability: sum / (p + n) as f64,
        })
        .collect())
}

/// The `[start, end)` range covering every record, `[0, 0)` when empty.
pub fn event_time_range(records: &[LabeledRecord]) -> (u64, u64) {
    let min = records.iter().map(|r| r.envelope.event_time).min();
    let max = records.iter().map(|r| r.envelope.event_time).max();
    match (min, max) {
        (Some(a), Some(b)) => (a, b.saturating_add(1)),
        _ => (0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!(
                "unknown report format {other:?} (expected csv or json)"
            )),
        }
    }
}

/// A report with a deterministic CSV and JSON rendering.
pub trait Report: Serialize {
    fn csv_records(&self) -> (Vec<&'static str>, Vec<Vec<String>>);

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn to_csv(&self) -> String {
        let (header, rows) = self.csv_records();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }
}

impl Report for LabelCountReport {
    fn csv_records(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.category.clone(),
                    r.number.to_string(),
                    format!("{:.1}", r.percentage),
                ]
            })
            .collect();
        let total_pct = if self.total == 0 { "0.0" } else { "100.0" };
        rows.push(vec![
            "Total".into(),
            self.total.to_string(),
            total_pct.into(),
        ]);
        (vec!["category", "number", "percentage"], rows)
    }
}

impl Report for Vec<TimeSeriesPoint> {
    fn csv_records(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let rows = self
            .iter()
            .map(|p| {
                vec![
                    p.window_start.to_string(),
                    p.window_len.to_string(),
                    p.positive_count.to_string(),
                    p.negative_count.to_string(),
                    format!("{:.6}", p.mean_probability),
                ]
            })
            .collect();
        (
            vec![
                "window_start",
                "window_len",
                "positive_count",
                "negative_count",
                "mean_probability",
            ],
            rows,
        )
    }
}

pub fn export_report<R: Report + ?Sized>(
    report: &R,
    format: ReportFormat,
    path: &Path,
) -> Result<(), QueryError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    crate::mqlog::write_atomic(path, report.render(format).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RecordEnvelope;

    fn labeled(id: &str, t: u64, p: f64) -> LabeledRecord {
        LabeledRecord {
            envelope: RecordEnvelope {
                doc_id: id.into(),
                event_time: t,
                text: "x".into(),
                author: None,
                label: None,
            },
            predicted_label: Sentiment::from_probability(p),
            probability: p,
            scored_at: 0,
            batch_id: 0,
        }
    }

    #[test]
    fn sixty_forty() {
        let r = LabelCountReport::from_counts(60, 40);
        assert_eq!(r.total, 100);
        assert_eq!(r.rows[0].percentage, 60.0);
        assert_eq!(r.rows[1].percentage, 40.0);
        assert_eq!(
            r.to_csv(),
            "category,number,percentage\nPositive,60,60.0\nNegative,40,40.0\nTotal,100,100.0\n"
        );
    }

    #[test]
    fn empty_report() {
        let r = LabelCountReport::from_counts(0, 0);
        assert!(r.rows.is_empty());
        assert_eq!(r.total, 0);
        assert_eq!(r.to_csv(), "category,number,percentage\nTotal,0,0.0\n");
    }

    #[test]
    fn one_decimal_rounding() {
        let r = LabelCountReport::from_counts(788_435, 790_177);
        assert_eq!(r.rows[0].percentage, 49.9);
        assert_eq!(r.rows[1].percentage, 50.1);
        assert!(r.to_table().contains("Total"));
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let r = LabelCountReport::from_counts(7, 3);
        let a = dir.path().join("reports/a.json");
        let b = dir.path().join("reports/b.json");
        export_report(&r, ReportFormat::Json, &a).unwrap();
        export_report(&r, ReportFormat::Json, &b).unwrap();
        let text = std::fs::read(&a).unwrap();
        assert_eq!(text, std::fs::read(&b).unwrap());
        let back: LabelCountReport = serde_json::from_slice(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_quotes_fields() {
        let r = LabelCountReport {
            rows: vec![LabelCount {
                category: "a,\"b\"".into(),
                number: 1,
                percentage: 100.0,
            }],
            total: 1,
        };
        assert!(r.to_csv().contains("\"a,\"\"b\"\"\",1,100.0"));
    }

    #[test]
    fn two_second_windows() {
        let recs: Vec<_> = (0..4)
            .map(|i| labeled(&i.to_string(), i * 1000, 0.8))
            .collect();
        let pts = sentiment_over_time(&recs, 2000, 0, 4000).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].positive_count + pts[0].negative_count, 2);
        assert_eq!(pts[1].window_start, 2000);
        assert!(pts.iter().all(|p| (p.mean_probability - 0.8).abs() < 1e-12));
        assert!(matches!(
            sentiment_over_time(&recs, 0, 0, 1),
            Err(QueryError::InvalidWindow)
        ));
    }

    #[test]
    fn empty_windows_are_omitted() {
        let recs = vec![labeled("a", 0, 0.2), labeled("b", 10_000, 0.9)];
        let pts = sentiment_over_time(&recs, 1000, 0, 20_000).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].negative_count, 1);
        assert_eq!(pts[1].window_start, 10_000);
        assert_eq!(event_time_range(&recs), (0, 10_001));
    }

    #[test]
    fn labeled_topic_counts_dedup_by_doc_id() {
        let dir = tempfile::tempdir().unwrap();
        let log = MessageLog::open(dir.path().join("mqlog")).unwrap();
        log.create_topic("labeled", 2).unwrap();
        for (id, p) in [("a", 0.9), ("b", 0.1), ("a", 0.9), ("c", 0.7)] {
            let l = labeled(id, 1, p);
            log.append("labeled", id, 1, &serde_json::to_vec(&l).unwrap())
                .unwrap();
        }
        let r = count_labeled(&log, "labeled").unwrap();
        assert_eq!(r.total, 3);
        assert_eq!(r.number(Sentiment::Positive), 2);
        assert!(count_labeled(&log, "missing").is_err());
    }

    #[test]
    fn csv_counts_with_and_without_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(
            &path,
            "\"4\",\"1\",\"d\",\"q\",\"u\",\"hello\"\n\"4\",\"2\",\"d\",\"q\",\"u\",\"Hello \"\n\"0\",\"3\",\"d\",\"q\",\"u\",\"bad\"\n",
        )
        .unwrap();
        assert_eq!(count_csv(&path, false).unwrap().total, 3);
        let r = count_csv(&path, true).unwrap();
        assert_eq!(r.total, 2);
        assert_eq!(r.number(Sentiment::Positive), 1);
        assert!(matches!(
            count_csv(&dir.path().join("nope.csv"), false),
            Err(QueryError::Source(_))
        ));
    }
}
