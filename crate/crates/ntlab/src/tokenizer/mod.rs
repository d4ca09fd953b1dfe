//! Byte-pair tokenizer over the three-character corpus alphabet
//! `{0, 1, space}`. Merges are learned greedily by pair frequency and may
//! cross spaces, so frequent whole words can become single tokens. Two
//! special tokens (mask, pad) live outside the trained dictionary budget.

mod shard;
mod train;

pub use shard::{read_token_shard, write_token_shard, SHARD_MAGIC};
pub use train::train_bpe;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

/// Token ids fit two bytes; shard files rely on this.
pub type TokenId = u16;

/// Base alphabet in id order: '0' -> 0, '1' -> 1, ' ' -> 2.
pub const BASE_SYMBOLS: [char; 3] = ['0', '1', ' '];

/// Largest trainable dictionary: ids D (mask) and D+1 (pad) must still
/// fit in a `TokenId`.
pub const MAX_DICT_SIZE: usize = (TokenId::MAX as usize) - 1;

pub const MASK_STRING: &str = "M";
pub const PAD_STRING: &str = "P";

const NONE: u32 = u32::MAX;

/// A trained tokenizer: the base alphabet plus an ordered merge list.
/// The dictionary has `size()` = 3 + merges tokens; ids `size()` and
/// `size()+1` are the mask and pad specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    strings: Vec<String>,
    merges: Vec<(TokenId, TokenId)>,
}

/// On-disk form: base strings, ordered merge pairs (new ids are implied
/// by position: 3 + index), and the special-token strings.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    base: Vec<String>,
    merges: Vec<(TokenId, TokenId)>,
    special_tokens: SpecialTokens,
}

#[derive(Serialize, Deserialize)]
struct SpecialTokens {
    mask: String,
    pad: String,
}

impl Vocabulary {
    /// Rebuild token strings from a merge list, checking that every merge
    /// refers to earlier ids and that no two tokens share a string.
    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self> {
        if 3 + merges.len() > MAX_DICT_SIZE {
            return Err(Error::Tokenizer(format!(
                "{} merges exceed the dictionary capacity {}",
                merges.len(),
                MAX_DICT_SIZE - 3
            )));
        }
        let mut strings: Vec<String> = BASE_SYMBOLS.iter().map(|c| c.to_string()).collect();
        let mut seen: HashSet<String> = strings.iter().cloned().collect();
        for (i, &(l, r)) in merges.iter().enumerate() {
            let new_id = 3 + i;
            if (l as usize) >= new_id || (r as usize) >= new_id {
                return Err(Error::Tokenizer(format!(
                    "merge {i} refers to id not yet defined: ({l}, {r})"
                )));
            }
            let s = format!("{}{}", strings[l as usize], strings[r as usize]);
            if !seen.insert(s.clone()) {
                return Err(Error::Tokenizer(format!(
                    "merge {i} duplicates token string {s:?}"
                )));
            }
            strings.push(s);
        }
        Ok(Self { strings, merges })
    }

    /// Dictionary size D (specials not counted).
    pub fn size(&self) -> usize {
        self.strings.len()
    }

    /// Model vocabulary size: D plus mask and pad.
    pub fn total_size(&self) -> usize {
        self.strings.len() + 2
    }

    pub fn mask_id(&self) -> TokenId {
        self.strings.len() as TokenId
    }

    pub fn pad_id(&self) -> TokenId {
        self.strings.len() as TokenId + 1
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// The character string of a token id; specials decode to their
    /// marker strings.
    pub fn token_string(&self, id: TokenId) -> Result<&str> {
        let idx = id as usize;
        if idx < self.strings.len() {
            Ok(&self.strings[idx])
        } else if id == self.mask_id() {
            Ok(MASK_STRING)
        } else if id == self.pad_id() {
            Ok(PAD_STRING)
        } else {
            Err(Error::Tokenizer(format!(
                "token id {id} out of range for dictionary of size {}",
                self.strings.len()
            )))
        }
    }

    /// Tokenize text over the corpus alphabet by applying merges in
    /// training order (ties broken left to right).
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let n = text.len();
        let mut ids: Vec<TokenId> = Vec::with_capacity(n);
        for b in text.bytes() {
            ids.push(match b {
                b'0' => 0,
                b'1' => 1,
                b' ' => 2,
                other => {
                    return Err(Error::Tokenizer(format!(
                        "character {:?} outside the corpus alphabet",
                        other as char
                    )))
                }
            });
        }
        if n < 2 || self.merges.is_empty() {
            return Ok(ids);
        }

        let rank: HashMap<(TokenId, TokenId), (u32, TokenId)> = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, &(l, r))| ((l, r), (i as u32, (3 + i) as TokenId)))
            .collect();

        let mut next: Vec<u32> = (1..=n as u32).collect();
        next[n - 1] = NONE;
        let mut prev: Vec<u32> = (0..n as u32).map(|i| i.wrapping_sub(1)).collect();
        prev[0] = NONE;
        let mut alive = vec![true; n];

        // Min-heap on (merge rank, position): earlier merges apply first,
        // and within one merge occurrences resolve left to right.
        let mut heap: BinaryHeap<std::cmp::Reverse<(u32, u32)>> = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&(rk, _)) = rank.get(&(ids[i], ids[i + 1])) {
                heap.push(std::cmp::Reverse((rk, i as u32)));
            }
        }

        while let Some(std::cmp::Reverse((rk, p))) = heap.pop() {
            let p = p as usize;
            if !alive[p] || next[p] == NONE {
                continue;
            }
            let q = next[p] as usize;
            // Entries go stale when neighbors merge; re-derive the rank.
            match rank.get(&(ids[p], ids[q])) {
                Some(&(cur, new_id)) if cur == rk => {
                    ids[p] = new_id;
                    alive[q] = false;
                    let r = next[q];
                    next[p] = r;
                    if r != NONE {
                        prev[r as usize] = p as u32;
                    }
                    if prev[p] != NONE {
                        let lp = prev[p] as usize;
                        if let Some(&(nrk, _)) = rank.get(&(ids[lp], ids[p])) {
                            heap.push(std::cmp::Reverse((nrk, lp as u32)));
                        }
                    }
                    if r != NONE {
                        if let Some(&(nrk, _)) = rank.get(&(ids[p], ids[r as usize])) {
                            heap.push(std::cmp::Reverse((nrk, p as u32)));
                        }
                    }
                }
                _ => {}
            }
        }

        Ok((0..n).filter(|&i| alive[i]).map(|i| ids[i]).collect())
    }

    /// Concatenate the strings of a token sequence.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.token_string(id)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            base: BASE_SYMBOLS.iter().map(|c| c.to_string()).collect(),
            merges: self.merges.clone(),
            special_tokens: SpecialTokens {
                mask: MASK_STRING.to_string(),
                pad: PAD_STRING.to_string(),
            },
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let expected: Vec<String> = BASE_SYMBOLS.iter().map(|c| c.to_string()).collect();
        if file.base != expected {
            return Err(Error::Tokenizer(format!(
                "unsupported base alphabet {:?}",
                file.base
            )));
        }
        Self::from_merges(file.merges)
    }
}
