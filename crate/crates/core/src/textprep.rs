//! Tokenization, vocabulary construction and fixed-length encoding.
//!
//! The same tokenizer feeds both the search index and the sentiment model so
//! that a query term and a model input always agree on what a "word" is.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const NUM_TOKEN: &str = "<num>";

const PAD_NAME: &str = "<pad>";
const OOV_NAME: &str = "<oov>";

/// Emoticons kept as single tokens. Longest first so `:-)` wins over `:)`.
pub const EMOTICONS: [&str; 6] = [":-)", ":-(", ":)", ":(", ":D", ";)"];

const PLACEHOLDERS: [&str; 3] = [URL_TOKEN, USER_TOKEN, NUM_TOKEN];

pub const DEFAULT_SEQ_LEN: usize = 40;
pub const DEFAULT_MAX_VOCAB: usize = 20_000;
pub const DEFAULT_MIN_FREQ: usize = 2;

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("vocabulary max_size must be at least 3, got {0}")]
    InvalidMaxSize(usize),
    #[error("vocabulary file {path}: {reason}")]
    BadVocabFile { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Splits `text` into normalized tokens.
///
/// Rules, applied per whitespace-separated chunk:
/// * `http://`, `https://` and `www.` chunks become `<url>`
/// * `@name` chunks become `<user>`
/// * the emoticons in [`EMOTICONS`] survive as-is, everything else is lowercased
/// * other punctuation separates words and is dropped
/// * words made only of digits become `<num>`
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL_TOKEN.to_string());
        } else if is_mention(chunk) {
            out.push(USER_TOKEN.to_string());
        } else if PLACEHOLDERS.contains(&chunk) {
            out.push(chunk.to_string());
        } else {
            split_chunk(chunk, &mut out);
        }
    }
    out
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_mention(chunk: &str) -> bool {
    chunk
        .strip_prefix('@')
        .and_then(|rest| rest.chars().next())
        .is_some_and(|c| c.is_alphanumeric() || c == '_')
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    let mut rest = chunk;
    while let Some(c) = rest.chars().next() {
        if let Some(emoticon) = emoticon_at(rest) {
            flush_word(&mut word, out);
            out.push(emoticon.to_string());
            rest = &rest[emoticon.len()..];
            continue;
        }
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush_word(&mut word, out);
        }
        rest = &rest[c.len_utf8()..];
    }
    flush_word(&mut word, out);
}

/// An emoticon only counts when it is not glued to a following letter or digit.
fn emoticon_at(s: &str) -> Option<&'static str> {
    EMOTICONS.iter().copied().find(|e| {
        s.starts_with(e)
            && !s[e.len()..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric())
    })
}

fn flush_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    if word.chars().all(char::is_numeric) {
        out.push(NUM_TOKEN.to_string());
        word.clear();
    } else {
        out.push(std::mem::take(word));
    }
}

/// Token to id mapping. Ids 0 and 1 are reserved for padding and unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    max_size: usize,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    max_size: usize,
    min_freq: usize,
    tokens: Vec<String>,
}

/// Accumulates token frequencies, one document at a time.
#[derive(Debug, Default, Clone)]
pub struct VocabularyBuilder {
    counts: HashMap<String, usize>,
}

impl VocabularyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<S: AsRef<str>>(&mut self, tokens: impl IntoIterator<Item = S>) {
        for token in tokens {
            let token = token.as_ref();
            if let Some(n) = self.counts.get_mut(token) {
                *n += 1;
            } else {
                self.counts.insert(token.to_string(), 1);
            }
        }
    }

    /// Ranks by (frequency desc, token asc) and keeps at most `max_size - 2` tokens.
    pub fn build(self, max_size: usize, min_freq: usize) -> Result<Vocabulary, TextprepError> {
        if max_size < 3 {
            return Err(TextprepError::InvalidMaxSize(max_size));
        }
        let mut ranked: Vec<(String, usize)> = self
            .counts
            .into_iter()
            .filter(|(t, n)| *n >= min_freq && t != PAD_NAME && t != OOV_NAME)
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - 2);
        Ok(Vocabulary::from_ranked(
            ranked.into_iter().map(|(t, _)| t).collect(),
            max_size,
            min_freq,
        ))
    }
}

/// Builds a vocabulary from a flat token stream.
pub fn build_vocabulary<S: AsRef<str>>(
    corpus: impl IntoIterator<Item = S>,
    max_size: usize,
    min_freq: usize,
) -> Result<Vocabulary, TextprepError> {
    let mut builder = VocabularyBuilder::new();
    builder.add(corpus);
    builder.build(max_size, min_freq)
}

impl Vocabulary {
    fn from_ranked(tokens: Vec<String>, max_size: usize, min_freq: usize) -> Self {
        let mut id_to_token = Vec::with_capacity(tokens.len() + 2);
        id_to_token.push(PAD_NAME.to_string());
        id_to_token.push(OOV_NAME.to_string());
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for token in tokens {
            token_to_id.insert(token.clone(), id_to_token.len() as u32);
            id_to_token.push(token);
        }
        Self {
            token_to_id,
            id_to_token,
            max_size,
            min_freq,
        }
    }

    /// Number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Tokens for ids `2..`, in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token[2..]
    }

    /// Maps ids back to tokens, stopping at the first padding id.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != PAD_ID)
            .map(|&id| self.token(id).unwrap_or(OOV_NAME).to_string())
            .collect()
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            max_size: self.max_size,
            min_freq: self.min_freq,
            tokens: self.tokens().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocabulary serializes")
    }

    /// Checksum recorded next to a trained model so a scorer can refuse a
    /// vocabulary the model was not trained with.
    pub fn checksum(&self) -> u64 {
        fnv1a64(
            serde_json::to_string(&self.to_file())
                .expect("vocabulary serializes")
                .as_bytes(),
        )
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let file: VocabFile = serde_json::from_str(json).map_err(|e| e.to_string())?;
        if file.max_size < 3 {
            return Err(format!("max_size {} below 3", file.max_size));
        }
        if file.tokens.len() + 2 > file.max_size {
            return Err(format!(
                "{} tokens exceed max_size {}",
                file.tokens.len(),
                file.max_size
            ));
        }
        let vocab = Self::from_ranked(file.tokens, file.max_size, file.min_freq);
        if vocab.token_to_id.len() != vocab.size() - 2 {
            return Err("duplicate tokens".to_string());
        }
        if vocab.get(PAD_NAME).is_some() || vocab.get(OOV_NAME).is_some() {
            return Err("reserved token listed".to_string());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TextprepError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextprepError> {
        let json = fs::read_to_string(path)?;
        Self::from_json(&json).map_err(|reason| TextprepError::BadVocabFile {
            path: path.display().to_string(),
            reason,
        })
    }
}

/// Fixed-length id sequence; positions at and after `true_length` hold [`PAD_ID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_length == 0
    }

    /// The non-padded prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

/// Keeps the first `seq_len` tokens and right-pads the rest.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, seq_len: usize) -> EncodedSequence {
    assert!(seq_len >= 1, "sequence length must be at least 1");
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(seq_len)
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    let true_length = ids.len();
    ids.resize(seq_len, PAD_ID);
    EncodedSequence { ids, true_length }
}
