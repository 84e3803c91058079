//! Append-only document archive with time-pruned scans.
//!
//! Segments are `segment-<n>.jsonl` (one envelope per line) with a sidecar
//! `segment-<n>.manifest.json` holding the event-time bounds, so a scan can
//! skip segments without opening them. With compression enabled, segment
//! files are `segment-<n>.jsonl.gz` made of one gzip member per flushed block.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RecordEnvelope;
use crate::mqlog::write_atomic;

pub const DEFAULT_SEGMENT_BYTES: u64 = 128 * 1024 * 1024;
pub const DEFAULT_SEGMENT_SPAN_MS: u64 = 6 * 60 * 60 * 1000;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive io error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid time range [{start}, {end}]")]
    InvalidRange { start: u64, end: u64 },
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy)]
pub struct ArchiveConfig {
    pub segment_bytes: u64,
    pub segment_span_ms: u64,
    pub compress: bool,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        Self {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            segment_span_ms: DEFAULT_SEGMENT_SPAN_MS,
            compress: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentManifest {
    pub min_time: u64,
    pub max_time: u64,
    pub record_count: u64,
    pub sealed: bool,
}

/// A segment as seen by readers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveSegment {
    pub id: u64,
    pub path: PathBuf,
    pub manifest: SegmentManifest,
}

/// Acknowledges an append: which segment holds the record and its index there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchivePosition {
    pub segment: u64,
    pub record: u64,
}

struct ActiveSegment {
    id: u64,
    file: File,
    bytes: u64,
    manifest: SegmentManifest,
    pending: Vec<u8>,
    pending_records: u64,
}

/// Single writer. Readers use [`ArchiveReader`] and only see flushed records.
pub struct Archive {
    dir: PathBuf,
    config: ArchiveConfig,
    active: Option<ActiveSegment>,
    next_id: u64,
}

fn data_name(id: u64, compress: bool) -> String {
    if compress {
        format!("segment-{id}.jsonl.gz")
    } else {
        format!("segment-{id}.jsonl")
    }
}

fn manifest_name(id: u64) -> String {
    format!("segment-{id}.manifest.json")
}

fn list_segment_ids(dir: &Path) -> io::Result<Vec<u64>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(id) = name
            .to_string_lossy()
            .strip_prefix("segment-")
            .and_then(|s| s.strip_suffix(".manifest.json"))
            .and_then(|s| s.parse().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Write-then-rename without fsync: readers see the old or the new manifest, never a mix.
fn replace_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn read_manifest(path: &Path) -> Result<SegmentManifest, ArchiveError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| ArchiveError::BadManifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl Archive {
    /// Opens the archive in `dir`. Segments left unsealed by a previous
    /// process are sealed; new appends always start a fresh segment.
    pub fn open(dir: impl Into<PathBuf>, config: ArchiveConfig) -> Result<Self, ArchiveError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let ids = list_segment_ids(&dir)?;
        for &id in &ids {
            let path = dir.join(manifest_name(id));
            let mut m = read_manifest(&path)?;
            if !m.sealed {
                m.sealed = true;
                write_atomic(&path, &serde_json::to_vec_pretty(&m).unwrap())?;
            }
        }
        Ok(Self {
            dir,
            config,
            active: None,
            next_id: ids.last().map_or(0, |id| id + 1),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn reader(&self) -> ArchiveReader {
        ArchiveReader::new(&self.dir)
    }

    fn needs_roll(&self, event_time: u64) -> bool {
        let Some(a) = &self.active else { return false };
        if a.manifest.record_count == 0 && a.pending_records == 0 {
            return false;
        }
        let min = a.manifest.min_time.min(event_time);
        let max = a.manifest.max_time.max(event_time);
        a.bytes + a.pending.len() as u64 >= self.config.segment_bytes
            || max - min > self.config.segment_span_ms
    }

    fn start_segment(&mut self) -> Result<(), ArchiveError> {
        let id = self.next_id;
        self.next_id += 1;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(data_name(id, self.config.compress)))?;
        self.active = Some(ActiveSegment {
            id,
            file,
            bytes: 0,
            manifest: SegmentManifest {
                min_time: u64::MAX,
                max_time: 0,
                record_count: 0,
                sealed: false,
            },
            pending: Vec::new(),
            pending_records: 0,
        });
        Ok(())
    }

    pub fn append(&mut self, env: &RecordEnvelope) -> Result<ArchivePosition, ArchiveError> {
        if self.needs_roll(env.event_time) {
            self.seal()?;
        }
        if self.active.is_none() {
            self.start_segment()?;
        }
        let a = self.active.as_mut().unwrap();
        let mut line = serde_json::to_vec(env).expect("envelope serializes");
        line.push(b'\n');
        a.pending.extend_from_slice(&line);
        a.manifest.min_time = a.manifest.min_time.min(env.event_time);
        a.manifest.max_time = a.manifest.max_time.max(env.event_time);
        let position = ArchivePosition {
            segment: a.id,
            record: a.manifest.record_count + a.pending_records,
        };
        a.pending_records += 1;
        Ok(position)
    }

    /// Writes buffered records and publishes the updated manifest. Appends are
    /// invisible to readers until this runs.
    pub fn flush(&mut self) -> Result<(), ArchiveError> {
        let compress = self.config.compress;
        let Some(a) = self.active.as_mut() else {
            return Ok(());
        };
        if a.pending_records == 0 {
            return Ok(());
        }
        let block = if compress {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&a.pending)?;
            enc.finish()?
        } else {
            std::mem::take(&mut a.pending)
        };
        a.file.write_all(&block)?;
        a.pending.clear();
        a.bytes += block.len() as u64;
        a.manifest.record_count += a.pending_records;
        a.pending_records = 0;
        replace_file(
            &self.dir.join(manifest_name(a.id)),
            &serde_json::to_vec_pretty(&a.manifest).unwrap(),
        )?;
        Ok(())
    }

    /// Flushes and marks the active segment immutable.
    pub fn seal(&mut self) -> Result<(), ArchiveError> {
        self.flush()?;
        if let Some(mut a) = self.active.take() {
            a.file.sync_data()?;
            a.manifest.sealed = true;
            write_atomic(
                &self.dir.join(manifest_name(a.id)),
                &serde_json::to_vec_pretty(&a.manifest).unwrap(),
            )?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), ArchiveError> {
        self.flush()?;
        if let Some(a) = &self.active {
            a.file.sync_data()?;
        }
        Ok(())
    }
}

impl Drop for Archive {
    fn drop(&mut self) {
        if let Err(e) = self.seal() {
            log::warn!("archive seal on close failed: {e}");
        }
    }
}

/// Read side of an archive directory. Safe to use while a writer appends.
pub struct ArchiveReader {
    dir: PathBuf,
    opened: AtomicU64,
    corrupt: AtomicU64,
}

impl ArchiveReader {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            opened: AtomicU64::new(0),
            corrupt: AtomicU64::new(0),
        }
    }

    pub fn segments(&self) -> Result<Vec<ArchiveSegment>, ArchiveError> {
        if !self.dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for id in list_segment_ids(&self.dir)? {
            let manifest = read_manifest(&self.dir.join(manifest_name(id)))?;
            let plain = self.dir.join(data_name(id, false));
            let path = if plain.exists() {
                plain
            } else {
                self.dir.join(data_name(id, true))
            };
            out.push(ArchiveSegment { id, path, manifest });
        }
        Ok(out)
    }

    /// Number of segment data files opened by scans so far.
    pub fn segments_opened(&self) -> u64 {
        self.opened.load(Ordering::Relaxed)
    }

    /// Lines that failed to parse and were skipped.
    pub fn corrupt_records(&self) -> u64 {
        self.corrupt.load(Ordering::Relaxed)
    }

    /// Envelopes with `event_time` in `[start, end]` whose text contains
    /// `contains` (when given), in append order. Segments whose time bounds
    /// miss the range are never opened.
    pub fn scan(
        &self,
        start: u64,
        end: u64,
        contains: Option<&str>,
    ) -> Result<Vec<RecordEnvelope>, ArchiveError> {
        let mut out = Vec::new();
        self.scan_with(start, end, contains, |env, _| out.push(env))?;
        Ok(out)
    }

    /// Streaming form of [`scan`](Self::scan); the callback also receives the stored line.
    pub fn scan_with(
        &self,
        start: u64,
        end: u64,
        contains: Option<&str>,
        mut f: impl FnMut(RecordEnvelope, &str),
    ) -> Result<(), ArchiveError> {
        if start > end {
            return Err(ArchiveError::InvalidRange { start, end });
        }
        for seg in self.segments()? {
            let m = &seg.manifest;
            if m.record_count == 0 || m.max_time < start || m.min_time > end {
                continue;
            }
            let file = File::open(&seg.path)?;
            self.opened.fetch_add(1, Ordering::Relaxed);
            let raw: Box<dyn Read> = if seg.path.extension().is_some_and(|e| e == "gz") {
                Box::new(MultiGzDecoder::new(file))
            } else {
                Box::new(file)
            };
            // Only the manifest's record count is published; anything past it is in flight.
            for line in BufReader::new(raw).lines().take(m.record_count as usize) {
                let line = line?;
                match serde_json::from_str::<RecordEnvelope>(&line) {
                    Ok(env) => {
                        if env.event_time < start || env.event_time > end {
                            continue;
                        }
                        if contains.is_some_and(|needle| !env.text.contains(needle)) {
                            continue;
                        }
                        f(env, &line);
                    }
                    Err(e) => {
                        log::warn!(
                            "skipping corrupt archive record in {}: {e}",
                            seg.path.display()
                        );
                        self.corrupt.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scan_all(&self) -> Result<Vec<RecordEnvelope>, ArchiveError> {
        self.scan(0, u64::MAX, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(id: u64, t: u64) -> RecordEnvelope {
        RecordEnvelope {
            doc_id: format!("d{id}"),
            event_time: t,
            text: format!("text number {id}"),
            author: (id % 2 == 0).then(|| "someone".to_string()),
            label: None,
        }
    }

    #[test]
    fn single_append_creates_one_segment() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
        a.append(&env(1, 10)).unwrap();
        assert!(a.reader().scan_all().unwrap().is_empty());
        a.flush().unwrap();
        let segs = a.reader().segments().unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].manifest.record_count, 1);
        assert!(!segs[0].manifest.sealed);
    }

    #[test]
    fn manifest_tracks_min_max() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
        for (i, t) in [10, 20, 5].into_iter().enumerate() {
            a.append(&env(i as u64, t)).unwrap();
        }
        a.flush().unwrap();
        let m = &a.reader().segments().unwrap()[0].manifest;
        assert_eq!((m.min_time, m.max_time), (5, 20));
    }

    #[test]
    fn scan_filters_by_range_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
        for i in 0..20 {
            a.append(&env(i, 100 + i)).unwrap();
        }
        a.flush().unwrap();
        let r = a.reader();
        assert_eq!(r.scan_all().unwrap().len(), 20);
        let ids: Vec<_> = r
            .scan(105, 107, None)
            .unwrap()
            .into_iter()
            .map(|e| e.doc_id)
            .collect();
        assert_eq!(ids, ["d5", "d6", "d7"]);
        assert!(r.scan(50, 50, None).unwrap().is_empty());
        let hits = r.scan(0, u64::MAX, Some("number 1")).unwrap();
        assert_eq!(hits.len(), 11); // 1 and 10..19
        assert!(matches!(
            r.scan(5, 4, None),
            Err(ArchiveError::InvalidRange { .. })
        ));
    }

    #[test]
    fn rolls_on_time_span_and_prunes_on_scan() {
        let dir = tempfile::tempdir().unwrap();
        let config = ArchiveConfig {
            segment_span_ms: 100,
            ..ArchiveConfig::default()
        };
        let mut a = Archive::open(dir.path(), config).unwrap();
        for (i, t) in [0, 50, 1000, 1050, 2000, 2050].into_iter().enumerate() {
            a.append(&env(i as u64, t)).unwrap();
        }
        a.flush().unwrap();
        let r = a.reader();
        assert_eq!(r.segments().unwrap().len(), 3);
        let mid = r.scan(1000, 1100, None).unwrap();
        assert_eq!(mid.len(), 2);
        assert_eq!(r.segments_opened(), 1);
    }

    #[test]
    fn rolls_on_size() {
        let dir = tempfile::tempdir().unwrap();
        let config = ArchiveConfig {
            segment_bytes: 150,
            ..ArchiveConfig::default()
        };
        let mut a = Archive::open(dir.path(), config).unwrap();
        for i in 0..10 {
            a.append(&env(i, 1)).unwrap();
        }
        a.flush().unwrap();
        let segs = a.reader().segments().unwrap();
        assert!(segs.len() >= 3);
        assert!(segs[..segs.len() - 1].iter().all(|s| s.manifest.sealed));
        assert_eq!(
            segs.iter().map(|s| s.manifest.record_count).sum::<u64>(),
            10
        );
    }

    #[test]
    fn restart_seals_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
            a.append(&env(1, 1)).unwrap();
        }
        let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
        a.append(&env(2, 2)).unwrap();
        a.flush().unwrap();
        let r = a.reader();
        let segs = r.segments().unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs[0].manifest.sealed);
        assert_eq!(r.scan_all().unwrap(), vec![env(1, 1), env(2, 2)]);
    }

    #[test]
    fn compressed_segments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = ArchiveConfig {
            compress: true,
            ..ArchiveConfig::default()
        };
        let mut a = Archive::open(dir.path(), config).unwrap();
        let envs: Vec<_> = (0..25).map(|i| env(i, i + 1)).collect();
        for (i, e) in envs.iter().enumerate() {
            a.append(e).unwrap();
            if i % 10 == 9 {
                a.flush().unwrap();
            }
        }
        // unflushed records are invisible
        assert_eq!(a.reader().scan_all().unwrap().len(), 20);
        a.flush().unwrap();
        assert_eq!(a.reader().scan_all().unwrap(), envs);
        assert!(dir.path().join("segment-0.jsonl.gz").exists());
    }

    #[test]
    fn corrupt_lines_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = Archive::open(dir.path(), ArchiveConfig::default()).unwrap();
            a.append(&env(1, 1)).unwrap();
            a.append(&env(2, 2)).unwrap();
        }
        let path = dir.path().join("segment-0.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[0] = "{not json";
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let r = ArchiveReader::new(dir.path());
        assert_eq!(r.scan_all().unwrap(), vec![env(2, 2)]);
        assert_eq!(r.corrupt_records(), 1);
    }
}
