//! Split protocol, sentence windowing, masking, and batch order.
//!
//! The corpus of W words is cut into 10 equal chunks; each chunk donates
//! its initial 75% of words to training, the remaining 25% of chunks 1-9
//! to validation and of chunk 10 to test. Region texts are tokenized
//! independently so no token ever straddles a region boundary.

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A fixed-length token window (length L, default 1024).
pub type Sentence = Vec<TokenId>;

pub const DEFAULT_SENTENCE_LEN: usize = 1024;
pub const DEFAULT_MASK_PROB: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutRole {
    Validation,
    Test,
}

/// One of the ten chunks: word indices `[start, end)`, of which
/// `[start, train_end)` train and `[train_end, end)` are held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSplit {
    pub start: usize,
    pub end: usize,
    pub train_end: usize,
    pub role: HoldoutRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub word_count: usize,
    pub chunks: Vec<ChunkSplit>,
}

pub const CHUNK_COUNT: usize = 10;
const TRAIN_NUM: usize = 3;
const TRAIN_DEN: usize = 4;

/// Cut `word_count` words into the 10-chunk split. Needs at least 40
/// words so every train and holdout interval is non-empty.
pub fn make_split(word_count: usize) -> Result<SplitPlan> {
    if word_count < 40 {
        return Err(Error::Dataset(format!(
            "split needs at least 40 words, corpus has {word_count}"
        )));
    }
    let mut chunks = Vec::with_capacity(CHUNK_COUNT);
    for k in 0..CHUNK_COUNT {
        let start = k * word_count / CHUNK_COUNT;
        let end = (k + 1) * word_count / CHUNK_COUNT;
        let train_end = start + (end - start) * TRAIN_NUM / TRAIN_DEN;
        chunks.push(ChunkSplit {
            start,
            end,
            train_end,
            role: if k + 1 == CHUNK_COUNT {
                HoldoutRole::Test
            } else {
                HoldoutRole::Validation
            },
        });
    }
    Ok(SplitPlan { word_count, chunks })
}

impl SplitPlan {
    /// Word-index intervals `[start, end)` of the training regions.
    pub fn train_intervals(&self) -> Vec<(usize, usize)> {
        self.chunks.iter().map(|c| (c.start, c.train_end)).collect()
    }

    pub fn validation_intervals(&self) -> Vec<(usize, usize)> {
        self.chunks
            .iter()
            .filter(|c| c.role == HoldoutRole::Validation)
            .map(|c| (c.train_end, c.end))
            .collect()
    }

    pub fn test_interval(&self) -> (usize, usize) {
        let last = self.chunks.last().expect("plan always has 10 chunks");
        (last.train_end, last.end)
    }

    pub fn train_word_count(&self) -> usize {
        self.train_intervals().iter().map(|(a, b)| b - a).sum()
    }
}

/// The three region texts, each a space-joined word sequence ready for
/// independent tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionTexts {
    pub train: String,
    pub validation: String,
    pub test: String,
}

/// Route a word stream into region texts according to the plan.
pub fn split_regions<I, S>(words: I, plan: &SplitPlan) -> Result<RegionTexts>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut texts = RegionTexts {
        train: String::new(),
        validation: String::new(),
        test: String::new(),
    };
    let mut chunk = 0usize;
    let mut seen = 0usize;
    for (i, w) in words.into_iter().enumerate() {
        if i >= plan.word_count {
            return Err(Error::Dataset(format!(
                "word stream longer than planned count {}",
                plan.word_count
            )));
        }
        while i >= plan.chunks[chunk].end {
            chunk += 1;
        }
        let c = &plan.chunks[chunk];
        let buf = if i < c.train_end {
            &mut texts.train
        } else {
            match c.role {
                HoldoutRole::Validation => &mut texts.validation,
                HoldoutRole::Test => &mut texts.test,
            }
        };
        if !buf.is_empty() {
            buf.push(' ');
        }
        buf.push_str(w.as_ref());
        seen = i + 1;
    }
    if seen != plan.word_count {
        return Err(Error::Dataset(format!(
            "word stream ended at {seen} words, plan covers {}",
            plan.word_count
        )));
    }
    Ok(texts)
}

/// Cut a token stream into length-`l` windows advancing by `stride`;
/// a final partial window is dropped. `stride = l` gives the default
/// disjoint consecutive sentences.
pub fn window(tokens: &[TokenId], l: usize, stride: usize) -> Vec<Sentence> {
    assert!(l >= 1 && stride >= 1, "window needs l >= 1 and stride >= 1");
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + l <= tokens.len() {
        out.push(tokens[start..start + l].to_vec());
        start += stride;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    /// Replaced by the mask token (probability 0.75).
    Mask,
    /// Replaced by a random non-special token ≠ original (0.15).
    Random,
    /// Left as is, but still predicted (0.10).
    Unchanged,
}

/// A sentence with its masking record: `input` is what the model sees,
/// `positions` the index set ℐ (sorted), `targets` the original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSentence {
    pub input: Sentence,
    pub positions: Vec<usize>,
    pub targets: Vec<TokenId>,
    pub actions: Vec<MaskAction>,
}

/// Mask `round_half_even(p_m · L)` distinct positions of a sentence.
/// `dict_size` is the trained dictionary size D; random replacements are
/// drawn below it (never a special) and resampled if equal to the
/// original token.
pub fn mask_sentence<R: Rng>(
    sentence: &[TokenId],
    p_m: f64,
    dict_size: usize,
    mask_id: TokenId,
    rng: &mut R,
) -> MaskedSentence {
    assert!((0.0..=1.0).contains(&p_m), "mask probability out of range");
    assert!(dict_size >= 2, "random replacement needs at least 2 tokens");
    let l = sentence.len();
    let k = (p_m * l as f64).round_ties_even() as usize;

    let mut positions: Vec<usize> = rand::seq::index::sample(rng, l, k.min(l)).into_vec();
    positions.sort_unstable();

    let mut input = sentence.to_vec();
    let mut targets = Vec::with_capacity(positions.len());
    let mut actions = Vec::with_capacity(positions.len());
    for &pos in &positions {
        let original = sentence[pos];
        let u: f64 = rng.gen();
        let action = if u < 0.75 {
            input[pos] = mask_id;
            MaskAction::Mask
        } else if u < 0.90 {
            input[pos] = loop {
                let cand = rng.gen_range(0..dict_size) as TokenId;
                if cand != original {
                    break cand;
                }
            };
            MaskAction::Random
        } else {
            MaskAction::Unchanged
        };
        targets.push(original);
        actions.push(action);
    }
    MaskedSentence {
        input,
        positions,
        targets,
        actions,
    }
}

/// Shuffled index batches covering `0..count` once. The final batch may
/// be short.
pub fn shuffled_batches<R: Rng>(count: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One epoch of next-word-prediction batches: every sentence exactly
/// once, order drawn from `rng`.
pub fn nwp_batches<'a, R: Rng>(
    sentences: &'a [Sentence],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<&'a Sentence>> {
    shuffled_batches(sentences.len(), batch_size, rng)
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| &sentences[i]).collect())
        .collect()
}
