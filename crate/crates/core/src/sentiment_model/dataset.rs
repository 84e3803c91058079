//! Sentiment140 CSV reader.
//!
//! Six unheaded fields: polarity, id, date, query, user, text. Polarity `0` is
//! negative and `4` positive; any other polarity (the test split has `2`) is
//! skipped. Text that is not valid UTF-8 is decoded as Latin-1.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{RecordEnvelope, Sentiment};

#[derive(Debug, Error)]
pub enum Sentiment140Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at row {row}: {message}")]
    Csv { row: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentiment140Row {
    pub polarity: Sentiment,
    pub id: String,
    pub date: String,
    pub user: String,
    pub text: String,
    /// 1-based position in the file, used as a stand-in event time.
    pub row: u64,
}

impl Sentiment140Row {
    pub fn to_envelope(&self) -> RecordEnvelope {
        RecordEnvelope {
            doc_id: self.id.clone(),
            event_time: self.row,
            text: self.text.clone(),
            author: (!self.user.is_empty()).then(|| self.user.clone()),
            label: Some(self.polarity),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sentiment140 {
    pub rows: Vec<Sentiment140Row>,
    /// Rows with a polarity other than 0 or 4.
    pub skipped_polarity: u64,
    /// Rows without exactly six fields.
    pub skipped_malformed: u64,
}

impl Sentiment140 {
    pub fn count(&self, label: Sentiment) -> usize {
        self.rows.iter().filter(|r| r.polarity == label).count()
    }
}

fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

/// Streams rows to `f`, returning the completed tally without the rows.
pub fn scan_sentiment140<R: Read>(
    reader: R,
    mut f: impl FnMut(Sentiment140Row),
) -> Result<Sentiment140, Sentiment140Error> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Sentiment140::default();
    let mut record = csv::ByteRecord::new();
    let mut row = 0u64;
    loop {
        match csv.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Sentiment140Error::Csv {
                    row: row + 1,
                    message: e.to_string(),
                })
            }
        }
        row += 1;
        if record.len() != 6 {
            out.skipped_malformed += 1;
            continue;
        }
        let polarity = match record[0].trim_ascii() {
            b"0" => Sentiment::Negative,
            b"4" => Sentiment::Positive,
            _ => {
                out.skipped_polarity += 1;
                continue;
            }
        };
        f(Sentiment140Row {
            polarity,
            id: decode(&record[1]),
            date: decode(&record[2]),
            user: decode(&record[4]),
            text: decode(&record[5]),
            row,
        });
    }
    Ok(out)
}

pub fn parse_sentiment140<R: Read>(reader: R) -> Result<Sentiment140, Sentiment140Error> {
    let mut rows = Vec::new();
    let mut out = scan_sentiment140(reader, |r| rows.push(r))?;
    out.rows = rows;
    Ok(out)
}

pub fn open_sentiment140(path: &Path) -> Result<std::io::BufReader<File>, Sentiment140Error> {
    let file = File::open(path).map_err(|source| Sentiment140Error::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    Ok(std::io::BufReader::new(file))
}

pub fn read_sentiment140(path: &Path) -> Result<Sentiment140, Sentiment140Error> {
    parse_sentiment140(open_sentiment140(path)?)
}

/// Picks `n` rows keeping the class ratio (each class rounded to the nearest
/// row, the remainder going to the larger class). Output keeps file order.
pub fn stratified_sample(data: &Sentiment140, n: usize, seed: u64) -> Vec<Sentiment140Row> {
    let total = data.rows.len();
    if n >= total {
        return data.rows.clone();
    }
    let pos: Vec<usize> = (0..total)
        .filter(|&i| data.rows[i].polarity == Sentiment::Positive)
        .collect();
    let neg: Vec<usize> = (0..total)
        .filter(|&i| data.rows[i].polarity == Sentiment::Negative)
        .collect();
    let n_pos = ((n as f64) * pos.len() as f64 / total as f64).round() as usize;
    let n_pos = n_pos.min(pos.len()).max(n.saturating_sub(neg.len()));
    let n_neg = n - n_pos;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = pos.choose_multiple(&mut rng, n_pos).copied().collect();
    picked.extend(neg.choose_multiple(&mut rng, n_neg).copied());
    picked.sort_unstable();
    picked.into_iter().map(|i| data.rows[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &[u8] = b"\"0\",\"1467810369\",\"Mon Apr 06 22:19:45 PDT 2009\",\"NO_QUERY\",\"_TheSpecialOne_\",\"@switchfoot http://twitpic.com/2y1zl - Awww, that's a bummer\"\n\
\"4\",\"1467822272\",\"Mon Apr 06 22:22:45 PDT 2009\",\"NO_QUERY\",\"ersle\",\"I LOVE @Health4UandPets u guys r the best!! \"\n\
\"2\",\"3\",\"Mon May 11 03:17:40 UTC 2009\",\"kindle2\",\"tpryan\",\"neutral, \"\"quoted\"\"\"\n\
\"4\",\"5\",\"d\",\"q\",\"u\",\"caf\xe9 ok\"\n\
\"4\",\"short\"\n";

    #[test]
    fn parses_rows_and_skips_others() {
        let d = parse_sentiment140(SAMPLE).unwrap();
        assert_eq!(d.rows.len(), 3);
        assert_eq!(d.skipped_polarity, 1);
        assert_eq!(d.skipped_malformed, 1);
        assert_eq!(d.rows[0].polarity, Sentiment::Negative);
        assert_eq!(d.rows[0].id, "1467810369");
        assert_eq!(d.rows[0].user, "_TheSpecialOne_");
        assert!(d.rows[0].text.starts_with("@switchfoot"));
        assert_eq!(d.rows[1].polarity, Sentiment::Positive);
        assert_eq!(d.rows[1].row, 2);
        assert_eq!(d.rows[2].text, "café ok");
        assert_eq!(d.count(Sentiment::Positive), 2);
    }

    #[test]
    fn envelope_carries_label_and_author() {
        let d = parse_sentiment140(SAMPLE).unwrap();
        let env = d.rows[1].to_envelope();
        assert_eq!(env.doc_id, "1467822272");
        assert_eq!(env.label, Some(Sentiment::Positive));
        assert_eq!(env.author.as_deref(), Some("ersle"));
        assert_eq!(env.event_time, 2);
    }

    #[test]
    fn missing_file() {
        let err = read_sentiment140(Path::new("/nonexistent/s140.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/s140.csv"));
    }

    #[test]
    fn sample_keeps_ratio() {
        let rows = (0..1000)
            .map(|i| Sentiment140Row {
                polarity: if i % 5 < 3 {
                    Sentiment::Positive
                } else {
                    Sentiment::Negative
                },
                id: i.to_string(),
                date: String::new(),
                user: String::new(),
                text: format!("t{i}"),
                row: i + 1,
            })
            .collect();
        let d = Sentiment140 {
            rows,
            ..Default::default()
        };
        let s = stratified_sample(&d, 100, 4);
        assert_eq!(s.len(), 100);
        assert_eq!(
            s.iter()
                .filter(|r| r.polarity == Sentiment::Positive)
                .count(),
            60
        );
        assert!(s.windows(2).all(|w| w[0].row < w[1].row));
        assert_eq!(stratified_sample(&d, 100, 4), s);
        assert_eq!(stratified_sample(&d, 5000, 4).len(), 1000);
    }
}
