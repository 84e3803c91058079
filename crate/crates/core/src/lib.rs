//! Single-process streaming text analytics.
//!
//! Documents enter through [`ingest`], are distributed by the embedded
//! partitioned log in [`mqlog`], archived by [`archive`] and indexed for BM25
//! search by [`index`]. The [`sentiment_model`] module trains a from-scratch
//! LSTM classifier offline; [`streamproc`] scores live records in micro-batches
//! with the saved model, and [`analytics`] turns archived and labeled data into
//! decision-support reports.
//!
//! Every level talks to the next through the log, so each stage can be
//! restarted independently and re-reads whatever it had not committed.

pub mod analytics;
pub mod archive;
pub mod hash;
pub mod index;
pub mod ingest;
pub mod mqlog;
pub mod sentiment_model;
pub mod streamproc;
pub mod synth;
pub mod textprep;

pub use ingest::{RecordEnvelope, Sentiment};
pub use streamproc::LabeledRecord;

/// Milliseconds since the Unix epoch, saturating at zero for clocks set before 1970.
pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
