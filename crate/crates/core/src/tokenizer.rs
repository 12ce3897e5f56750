//! WordPiece tokenization and construction of encoder inputs.
//!
//! An essay is split into the WordPiece id sequence `T1`. The document-scale
//! input is `T1` truncated or padded to `L` tokens and framed by `[CLS]` and
//! `[SEP]`; segment-scale inputs are `T1` fitted to the prompt budget `n_p`
//! and cut into chunks of `k` tokens, each framed the same way.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

/// Default document length budget, excluding `[CLS]` and `[SEP]`.
pub const DOC_LEN: usize = 510;

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocabulary {
    /// Builds a vocabulary where `tokens[i]` has id `i`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("vocabulary lacks {name}")))
        };
        let (pad, unk, cls, sep) = (special(PAD)?, special(UNK)?, special(CLS)?, special(SEP)?);
        Ok(Vocabulary {
            tokens,
            index,
            pad,
            unk,
            cls,
            sep,
        })
    }

    /// Reads a vocabulary file: one token per line, line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Trains a small vocabulary from a corpus: the special tokens, every
    /// character seen (as a word-initial piece and as a `##` continuation),
    /// then whole words by descending frequency until `max_size` is reached.
    pub fn build<'t>(texts: impl IntoIterator<Item = &'t str>, max_size: usize) -> Result<Self> {
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in basic_split(text) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let mut chars: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();

        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        for c in &chars {
            tokens.push(c.to_string());
        }
        for c in &chars {
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        if tokens.len() > max_size {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size {max_size} cannot hold {} special and character tokens",
                tokens.len()
            )));
        }
        let mut words: Vec<(String, usize)> = word_counts
            .into_iter()
            .filter(|(w, _)| w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size - tokens.len();
        tokens.extend(words.into_iter().take(room).map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }
}

/// Token ids plus an attention mask that is 0 exactly at `[PAD]` positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>, pad_id: u32) -> Self {
        let attention_mask = ids.iter().map(|&t| u8::from(t != pad_id)).collect();
        TokenSequence { ids, attention_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mask_bools(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|&m| m != 0).collect()
    }
}

/// The `m = ⌈n_p / k⌉` framed segments of one essay at scale `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBatch {
    pub scale: usize,
    pub segments: Vec<TokenSequence>,
}

impl SegmentBatch {
    /// Segment contents with the `[CLS]`/`[SEP]` framing removed.
    pub fn contents(&self) -> impl Iterator<Item = &[u32]> {
        self.segments.iter().map(|s| &s.ids[1..s.ids.len() - 1])
    }
}

/// Lowercases and splits on whitespace, isolating punctuation characters.
pub fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c.is_control() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match-first split of one (already lowercased) word.
fn wordpiece_word(word: &str, vocab: &Vocabulary, out: &mut Vec<u32>) {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        out.push(vocab.unk_id());
        return;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            let body: String = chars[start..end].iter().collect();
            let piece = if start > 0 { format!("{CONTINUATION}{body}") } else { body };
            if let Some(id) = vocab.id(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => pieces.push(id),
            None => {
                out.push(vocab.unk_id());
                return;
            }
        }
        start = end;
    }
    out.extend(pieces);
}

/// WordPiece tokenization of raw text into `T1`.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = Vec::new();
    for word in basic_split(text) {
        wordpiece_word(&word, vocab, &mut out);
    }
    out
}

/// Document-scale input `T2`, always `doc_len + 2` positions:
/// `[CLS] t_1..t_L [SEP]` when the essay is longer than `doc_len`, otherwise
/// `[CLS] T1 [PAD]… [SEP]` with the padding placed before `[SEP]`.
pub fn build_doc_sequence(t1: &[u32], doc_len: usize, vocab: &Vocabulary) -> Result<TokenSequence> {
    if doc_len == 0 {
        return Err(Error::InvalidArgument("document length must be at least 1".into()));
    }
    let mut ids = Vec::with_capacity(doc_len + 2);
    ids.push(vocab.cls_id());
    let kept = t1.len().min(doc_len);
    ids.extend_from_slice(&t1[..kept]);
    ids.resize(doc_len + 1, vocab.pad_id());
    ids.push(vocab.sep_id());
    Ok(TokenSequence::from_ids(ids, vocab.pad_id()))
}

/// Truncates (keeping the head) or right-pads `T1` to exactly `n_p` ids.
pub fn fit_to_np(t1: &[u32], n_p: usize, vocab: &Vocabulary) -> Vec<u32> {
    let mut out: Vec<u32> = t1.iter().copied().take(n_p).collect();
    out.resize(n_p, vocab.pad_id());
    out
}

/// Number of segments at scale `k` for budget `n_p`.
pub fn segment_count(n_p: usize, k: usize) -> usize {
    n_p.div_ceil(k)
}

/// Splits the `n_p`-fitted sequence into chunks of `k` content tokens (the
/// last chunk may be shorter), each framed as `[CLS] chunk [SEP]`.
pub fn build_segments(t1: &[u32], n_p: usize, k: usize, vocab: &Vocabulary) -> Result<SegmentBatch> {
    if k == 0 || k > n_p {
        return Err(Error::InvalidArgument(format!(
            "segment scale {k} must lie in [1, {n_p}]"
        )));
    }
    let fitted = fit_to_np(t1, n_p, vocab);
    let segments = fitted
        .chunks(k)
        .map(|chunk| {
            let mut ids = Vec::with_capacity(chunk.len() + 2);
            ids.push(vocab.cls_id());
            ids.extend_from_slice(chunk);
            ids.push(vocab.sep_id());
            TokenSequence::from_ids(ids, vocab.pad_id())
        })
        .collect();
    Ok(SegmentBatch { scale: k, segments })
}
