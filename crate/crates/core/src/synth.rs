//! Deterministic synthetic tweets in Sentiment140 and JSON-lines form, for
//! tests, demos and desk-scale runs when the real dataset is not at hand.
//!
//! Each tweet mixes Zipf-distributed filler words with one to three sentiment
//! cues, sometimes negated ("not happy"), plus mentions, links, numbers and
//! emoticons. A fraction of labels is flipped so that no classifier can be
//! perfect.

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::Sentiment;

const POSITIVE: &[&str] = &[
    "love",
    "great",
    "happy",
    "awesome",
    "good",
    "amazing",
    "best",
    "fun",
    "excited",
    "glad",
    "nice",
    "wonderful",
    "thanks",
    "beautiful",
    "cool",
    "perfect",
    "enjoy",
    "lovely",
    "yay",
    "proud",
    "sweet",
    "fantastic",
    "smile",
    "brilliant",
];
const NEGATIVE: &[&str] = &[
    "hate", "sad", "bad", "awful", "terrible", "sick", "tired", "miss", "sorry", "worst", "hurts",
    "annoyed", "bored", "broken", "lonely", "ugh", "fail", "cry", "upset", "stressed", "horrible",
    "angry", "lost", "boring",
];
const NEGATIONS: &[&str] = &["not", "never", "no", "dont", "cant"];
const POSITIVE_EMOTICONS: &[&str] = &[":)", ":-)", ":D", ";)"];
const NEGATIVE_EMOTICONS: &[&str] = &[":(", ":-("];
const SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "ra", "si", "to", "ve", "za", "de", "fi", "go", "hu", "ja", "pe",
    "qu", "ty", "wo", "xe", "an", "el", "in", "or", "us",
];
const COMMON: &[&str] = &[
    "i", "the", "to", "a", "my", "and", "is", "in", "it", "for", "you", "of", "on", "me", "so",
    "have", "that", "but", "just", "day", "at", "was", "with", "today", "now", "work", "going",
    "get", "this", "be", "up", "time", "all", "out", "back", "night", "morning", "home", "new",
    "got", "really", "still", "week", "about", "tomorrow", "know",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub positive: usize,
    pub negative: usize,
    /// Probability that a tweet's label disagrees with its text.
    pub label_noise: f64,
    /// Probability that a cue is negated and its polarity reversed.
    pub negation_rate: f64,
    /// Size of the invented filler vocabulary.
    pub filler_words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 140,
            positive: 4_990,
            negative: 5_010,
            label_noise: 0.12,
            negation_rate: 0.2,
            filler_words: 4_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthTweet {
    pub id: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub user: String,
    pub text: String,
    pub label: Sentiment,
}

/// Start of the synthetic timeline, 2009-04-06T22:19:45Z.
pub const BASE_TIMESTAMP_MS: u64 = 1_239_056_385_000;

pub struct TweetGenerator {
    rng: ChaCha8Rng,
    config: SynthConfig,
    filler: Vec<String>,
    filler_dist: WeightedIndex<f64>,
    next_id: u64,
    clock: u64,
}

impl TweetGenerator {
    pub fn new(config: SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut filler: Vec<String> = COMMON.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = filler.iter().cloned().collect();
        for w in POSITIVE.iter().chain(NEGATIVE).chain(NEGATIONS) {
            seen.insert(w.to_string());
        }
        while filler.len() < config.filler_words.max(COMMON.len()) {
            let n = rng.gen_range(2..=4);
            let word: String = (0..n)
                .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
                .collect();
            if seen.insert(word.clone()) {
                filler.push(word);
            }
        }
        let weights: Vec<f64> = (1..=filler.len()).map(|r| 1.0 / r as f64).collect();
        let filler_dist = WeightedIndex::new(weights).expect("non-empty weights");
        Self {
            rng,
            config,
            filler,
            filler_dist,
            next_id: 1_467_810_369,
            clock: BASE_TIMESTAMP_MS,
        }
    }

    fn cue(&mut self, polarity: Sentiment) -> String {
        let negate = self.rng.gen_bool(self.config.negation_rate);
        // A negated cue carries the opposite word: "not happy" reads negative.
        let word_polarity = match (polarity, negate) {
            (p, false) => p,
            (Sentiment::Positive, true) => Sentiment::Negative,
            (Sentiment::Negative, true) => Sentiment::Positive,
        };
        let words = match word_polarity {
            Sentiment::Positive => POSITIVE,
            Sentiment::Negative => NEGATIVE,
        };
        let word = words[self.rng.gen_range(0..words.len())];
        if negate {
            format!(
                "{} {word}",
                NEGATIONS[self.rng.gen_range(0..NEGATIONS.len())]
            )
        } else {
            word.to_string()
        }
    }

    fn filler_word(&mut self) -> String {
        self.filler[self.filler_dist.sample(&mut self.rng)].clone()
    }

    /// Text whose sentiment is `polarity`, before label noise.
    pub fn text_for(&mut self, polarity: Sentiment) -> String {
        let mut parts: Vec<String> = Vec::new();
        if self.rng.gen_bool(0.25) {
            parts.push(format!("@{}", self.filler_word()));
        }
        let n_filler = self.rng.gen_range(3..=12);
        let n_cues = self.rng.gen_range(1..=3);
        // A minority of tweets carry one cue of the other polarity.
        let mixed = self.rng.gen_bool(0.15);
        let mut slots: Vec<Option<Sentiment>> = vec![None; n_filler];
        for _ in 0..n_cues {
            let at = self.rng.gen_range(0..=slots.len());
            slots.insert(at, Some(polarity));
        }
        if mixed {
            let other = match polarity {
                Sentiment::Positive => Sentiment::Negative,
                Sentiment::Negative => Sentiment::Positive,
            };
            let at = self.rng.gen_range(0..=slots.len());
            slots.insert(at, Some(other));
        }
        for slot in slots {
            match slot {
                Some(p) => parts.push(self.cue(p)),
                None => parts.push(self.filler_word()),
            }
        }
        if self.rng.gen_bool(0.1) {
            parts.push(self.rng.gen_range(1..1000).to_string());
        }
        if self.rng.gen_bool(0.1) {
            parts.push(format!("http://bit.ly/{}", self.filler_word()));
        }
        if self.rng.gen_bool(0.2) {
            let set = match polarity {
                Sentiment::Positive => POSITIVE_EMOTICONS,
                Sentiment::Negative => NEGATIVE_EMOTICONS,
            };
            parts.push(set[self.rng.gen_range(0..set.len())].to_string());
        }
        if self.rng.gen_bool(0.3) {
            if let Some(first) = parts.first_mut() {
                let mut c = first.chars();
                if let Some(h) = c.next() {
                    *first = h.to_uppercase().chain(c).collect();
                }
            }
        }
        let mut text = parts.join(" ");
        if self.rng.gen_bool(0.2) {
            text.push_str(["!", "!!", ".", "...", "?"][self.rng.gen_range(0..5)]);
        }
        text
    }

    pub fn tweet(&mut self, label: Sentiment) -> SynthTweet {
        let flip = self.rng.gen_bool(self.config.label_noise);
        let text_polarity = match (label, flip) {
            (l, false) => l,
            (Sentiment::Positive, true) => Sentiment::Negative,
            (Sentiment::Negative, true) => Sentiment::Positive,
        };
        let text = self.text_for(text_polarity);
        let user = format!("{}_{}", self.filler_word(), self.rng.gen_range(0..10_000));
        self.next_id += self.rng.gen_range(1..50);
        self.clock += self.rng.gen_range(0..2_000);
        SynthTweet {
            id: self.next_id,
            timestamp: self.clock,
            user,
            text,
            label,
        }
    }

    /// All configured tweets, classes interleaved in a seeded order.
    pub fn dataset(&mut self) -> Vec<SynthTweet> {
        let mut labels = vec![Sentiment::Positive; self.config.positive];
        labels.extend(vec![Sentiment::Negative; self.config.negative]);
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut self.rng);
        labels.into_iter().map(|l| self.tweet(l)).collect()
    }
}

/// Sentiment140-style date, e.g. `Mon Apr 06 22:19:45 UTC 2009`.
pub fn format_date(timestamp_ms: u64) -> String {
    chrono::DateTime::from_timestamp((timestamp_ms / 1000) as i64, 0)
        .map(|d| d.format("%a %b %d %H:%M:%S UTC %Y").to_string())
        .unwrap_or_default()
}

/// Writes tweets as six-field Sentiment140 CSV rows.
pub fn write_sentiment140<W: Write>(tweets: &[SynthTweet], out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(out);
    for t in tweets {
        let polarity = match t.label {
            Sentiment::Positive => "4",
            Sentiment::Negative => "0",
        };
        w.write_record([
            polarity,
            &t.id.to_string(),
            &format_date(t.timestamp),
            "NO_QUERY",
            &t.user,
            &t.text,
        ])?;
    }
    w.flush()
}

/// JSON-lines source records. With `with_label` the true label is included.
pub fn write_jsonl<W: Write>(
    tweets: &[SynthTweet],
    with_label: bool,
    mut out: W,
) -> io::Result<()> {
    let mut line = String::new();
    for t in tweets {
        line.clear();
        let mut v = serde_json::json!({
            "id": t.id.to_string(),
            "timestamp": t.timestamp,
            "user": t.user,
            "text": t.text,
        });
        if with_label {
            v["label"] = serde_json::json!(t.label.as_str());
        }
        writeln!(line, "{v}").expect("write to string");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Stream of JSON-lines records at `rate` per second of recorded time, with
/// a share of exact duplicates and of malformed lines mixed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub seed: u64,
    pub records: usize,
    pub rate_per_sec: f64,
    pub duplicate_rate: f64,
    pub malformed_rate: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            records: 10_000,
            rate_per_sec: 1000.0,
            duplicate_rate: 0.02,
            malformed_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub lines: u64,
    pub duplicates: u64,
    pub malformed: u64,
}

pub fn write_stream<W: Write>(config: &StreamConfig, mut out: W) -> io::Result<StreamManifest> {
    let mut gen = TweetGenerator::new(SynthConfig {
        seed: config.seed,
        ..SynthConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let step_ms = 1000.0 / config.rate_per_sec;
    let mut manifest = StreamManifest::default();
    let mut previous: Option<String> = None;
    for i in 0..config.records {
        let ts = BASE_TIMESTAMP_MS + (i as f64 * step_ms).round() as u64;
        let line = if rng.gen_bool(config.malformed_rate) {
            manifest.malformed += 1;
            format!("{{\"id\": \"broken-{i}\", \"text\": ")
        } else if previous.is_some() && rng.gen_bool(config.duplicate_rate) {
            manifest.duplicates += 1;
            // Same text under a new id, as a retweet-style duplicate.
            let text = previous.clone().unwrap();
            serde_json::json!({"id": format!("dup-{i}"), "timestamp": ts, "text": text}).to_string()
        } else {
            let label = if rng.gen_bool(0.5) {
                Sentiment::Positive
            } else {
                Sentiment::Negative
            };
            let t = gen.tweet(label);
            previous = Some(t.text.clone());
            serde_json::json!({"id": format!("s{i}"), "timestamp": ts, "user": t.user, "text": t.text}).to_string()
        };
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        manifest.lines += 1;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentiment_model::parse_sentiment140;
    use crate::textprep::tokenize;

    fn small() -> SynthConfig {
        SynthConfig {
            positive: 60,
            negative: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_exact_class_counts() {
        let a = TweetGenerator::new(small()).dataset();
        let b = TweetGenerator::new(small()).dataset();
        assert_eq!(a, b);
        assert_eq!(
            a.iter().filter(|t| t.label == Sentiment::Positive).count(),
            60
        );
        assert!(a
            .windows(2)
            .all(|w| w[0].id < w[1].id && w[0].timestamp <= w[1].timestamp));
        let c = TweetGenerator::new(SynthConfig { seed: 1, ..small() }).dataset();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trips_through_reader() {
        let tweets = TweetGenerator::new(small()).dataset();
        let mut buf = Vec::new();
        write_sentiment140(&tweets, &mut buf).unwrap();
        let parsed = parse_sentiment140(buf.as_slice()).unwrap();
        assert_eq!(parsed.rows.len(), 100);
        assert_eq!(parsed.skipped_malformed + parsed.skipped_polarity, 0);
        for (t, r) in tweets.iter().zip(&parsed.rows) {
            assert_eq!(t.text, r.text);
            assert_eq!(t.label, r.polarity);
            assert_eq!(t.id.to_string(), r.id);
        }
    }

    #[test]
    fn texts_tokenize_to_something() {
        let mut g = TweetGenerator::new(small());
        for _ in 0..200 {
            let t = g.tweet(Sentiment::Negative);
            assert!(!tokenize(&t.text).is_empty());
        }
    }

    #[test]
    fn date_format() {
        assert_eq!(
            format_date(BASE_TIMESTAMP_MS),
            "Mon Apr 06 22:19:45 UTC 2009"
        );
    }

    #[test]
    fn stream_manifest_counts_lines() {
        let cfg = StreamConfig {
            records: 500,
            duplicate_rate: 0.1,
            malformed_rate: 0.05,
            ..StreamConfig::default()
        };
        let mut buf = Vec::new();
        let m = write_stream(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 500);
        assert_eq!(m.lines, 500);
        assert!(m.duplicates > 0 && m.malformed > 0);
        let bad = text
            .lines()
            .filter(|l| serde_json::from_str::<serde_json::Value>(l).is_err())
            .count() as u64;
        assert_eq!(bad, m.malformed);
    }
}
