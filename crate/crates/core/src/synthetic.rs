//! Planted-pattern corpora for smoke tests and demonstrations.
//!
//! An essay is `blocks × block_len` words drawn from a small made-up
//! vocabulary. A few words are markers; a block either holds
//! `markers_per_block` markers or none, and the essay's score is the number of
//! marked blocks times `score_step`. The pattern is only visible at segment level, and a document
//! window shorter than the essay cannot see all of it.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Essay, PromptSet, PromptSpec};
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub prompt_id: i64,
    pub essays: usize,
    pub blocks: usize,
    pub block_len: usize,
    /// Vocabulary size, markers included.
    pub words: usize,
    pub markers: usize,
    /// Marker tokens planted in each marked block.
    pub markers_per_block: usize,
    /// Score added per marked block.
    pub score_step: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            prompt_id: 1,
            essays: 64,
            blocks: 5,
            block_len: 20,
            words: 200,
            markers: 4,
            markers_per_block: 1,
            score_step: 1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Words per essay; also the prompt budget `n_p`.
    pub fn essay_len(&self) -> usize {
        self.blocks * self.block_len
    }

    pub fn prompt(&self) -> Result<PromptSpec> {
        PromptSpec::new(
            self.prompt_id,
            0.0,
            (self.blocks as u32 * self.score_step) as f64,
            Some(self.essay_len()),
            true,
        )
    }

    fn validate(&self) -> Result<()> {
        let max_words = CONSONANTS.len() * VOWELS.len();
        if self.blocks == 0 || self.block_len == 0 || self.score_step == 0 {
            return Err(Error::InvalidArgument("blocks, block_len and score_step must be positive".into()));
        }
        if self.markers_per_block == 0 || self.markers_per_block > self.block_len {
            return Err(Error::InvalidArgument(format!(
                "markers_per_block {} not in [1, block_len]",
                self.markers_per_block
            )));
        }
        if self.markers == 0 || self.markers >= self.words || self.words > max_words * max_words {
            return Err(Error::InvalidArgument(format!(
                "need 0 < markers ({}) < words ({}) ≤ {}",
                self.markers,
                self.words,
                max_words * max_words
            )));
        }
        Ok(())
    }
}

/// The `i`-th made-up word: two consonant-vowel syllables.
pub fn word(i: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let syl = |s: usize| [CONSONANTS[s / VOWELS.len()] as char, VOWELS[s % VOWELS.len()] as char];
    let (a, b) = (syl(i / syllables), syl(i % syllables));
    [a[0], a[1], b[0], b[1]].iter().collect()
}

/// Marker words are the first `markers` words of the vocabulary.
pub fn is_marker(w: &str, cfg: &SyntheticConfig) -> bool {
    (0..cfg.markers).any(|i| word(i) == w)
}

/// Generates the corpus. Marked-block counts are uniform over `0..=blocks`.
pub fn planted_corpus(cfg: &SyntheticConfig) -> Result<Vec<Essay>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.prompt_id as u64);
    let mut essays = Vec::with_capacity(cfg.essays);
    for n in 0..cfg.essays {
        let marked = rng.gen_range(0..=cfg.blocks);
        let mut is_marked = vec![false; cfg.blocks];
        for b in sample(&mut rng, cfg.blocks, marked) {
            is_marked[b] = true;
        }
        let mut words = Vec::with_capacity(cfg.essay_len());
        for &m in &is_marked {
            let mut planted = vec![false; cfg.block_len];
            if m {
                for j in sample(&mut rng, cfg.block_len, cfg.markers_per_block) {
                    planted[j] = true;
                }
            }
            for &p in &planted {
                let w = if p {
                    rng.gen_range(0..cfg.markers)
                } else {
                    rng.gen_range(cfg.markers..cfg.words)
                };
                words.push(word(w));
            }
        }
        essays.push(Essay {
            essay_id: format!("p{}-{n:04}", cfg.prompt_id),
            prompt_id: cfg.prompt_id,
            text: words.join(" "),
            raw_score: (marked as u32 * cfg.score_step) as f64,
        });
    }
    Ok(essays)
}

/// Two prompts sharing the planted rule: `target` and a `source` prompt whose
/// scores are doubled, so only normalized labels agree.
pub fn two_prompt_corpus(target: &SyntheticConfig, source_essays: usize) -> Result<(Vec<Essay>, PromptSet)> {
    let source = SyntheticConfig {
        prompt_id: target.prompt_id + 1,
        essays: source_essays,
        score_step: 2 * target.score_step,
        seed: target.seed.wrapping_add(1),
        ..target.clone()
    };
    let mut essays = planted_corpus(target)?;
    essays.extend(planted_corpus(&source)?);
    let prompts = PromptSet::new([target.prompt()?, source.prompt()?])?;
    Ok((essays, prompts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{basic_split, wordpiece_tokenize, Vocabulary};
    use std::collections::HashSet;

    #[test]
    fn words_are_distinct() {
        let w: HashSet<String> = (0..200).map(word).collect();
        assert_eq!(w.len(), 200);
        assert_eq!(word(0), "baba");
    }

    #[test]
    fn scores_count_marked_blocks() {
        let cfg = SyntheticConfig {
            essays: 40,
            markers_per_block: 3,
            ..SyntheticConfig::default()
        };
        let spec = cfg.prompt().unwrap();
        for e in planted_corpus(&cfg).unwrap() {
            let words = basic_split(&e.text);
            assert_eq!(words.len(), cfg.essay_len());
            let mut count = 0;
            for block in words.chunks(cfg.block_len) {
                let m = block.iter().filter(|w| is_marker(w, &cfg)).count();
                assert!(m == 0 || m == cfg.markers_per_block);
                count += usize::from(m > 0);
            }
            assert_eq!(e.raw_score, count as f64);
            assert!(spec.contains(e.raw_score));
        }
    }

    #[test]
    fn every_word_is_one_token() {
        let cfg = SyntheticConfig::default();
        let essays = planted_corpus(&cfg).unwrap();
        let vocab = Vocabulary::build(essays.iter().map(|e| e.text.as_str()), 400).unwrap();
        for e in &essays {
            let ids = wordpiece_tokenize(&e.text, &vocab);
            assert_eq!(ids.len(), cfg.essay_len());
            assert!(!ids.contains(&vocab.unk_id()));
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let cfg = SyntheticConfig::default();
        assert_eq!(planted_corpus(&cfg).unwrap(), planted_corpus(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(planted_corpus(&cfg).unwrap(), planted_corpus(&other).unwrap());
    }

    #[test]
    fn two_prompts_share_normalized_labels() {
        let target = SyntheticConfig {
            essays: 10,
            ..SyntheticConfig::default()
        };
        let (essays, prompts) = two_prompt_corpus(&target, 20).unwrap();
        assert_eq!(essays.len(), 30);
        assert_eq!(prompts.get(2).unwrap().score_max, 10.0);
        assert!(essays.iter().filter(|e| e.prompt_id == 2).all(|e| e.raw_score % 2.0 == 0.0));
    }
}
