//! Trees and Dyck words. An integer's iterated factorization becomes a
//! rooted planar tree (exponents factorized recursively, stopping at
//! exponent 1), and the tree becomes a balanced binary word: `1` entering
//! a child, `0` leaving it, children visited in ascending-prime order.

use super::factor::factorize;
use crate::error::{Error, Result};
use std::collections::HashSet;

/// Rooted planar tree of iterated factorization. Children are ordered by
/// ascending prime at every level; labels are deliberately dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorTree {
    pub children: Vec<FactorTree>,
}

impl FactorTree {
    pub fn leaf() -> Self {
        Self { children: vec![] }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Self::node_count).sum::<usize>()
    }
}

/// Balanced binary word of one tree. For n >= 2 it is non-empty, starts
/// with `1`, ends with `0`, has equal digit counts and every prefix has
/// at least as many `1`s as `0`s.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyckWord(String);

impl DyckWord {
    /// Validate the invariants and wrap the string.
    pub fn parse(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidWord("empty word".into()));
        }
        let mut depth: i64 = 0;
        for c in s.chars() {
            match c {
                '1' => depth += 1,
                '0' => depth -= 1,
                other => {
                    return Err(Error::InvalidWord(format!("bad character {other:?} in {s:?}")))
                }
            }
            if depth < 0 {
                return Err(Error::InvalidWord(format!("prefix dips below zero in {s:?}")));
            }
        }
        if depth != 0 {
            return Err(Error::InvalidWord(format!("unbalanced word {s:?}")));
        }
        Ok(Self(s.to_string()))
    }

    pub(crate) fn from_validated(s: String) -> Self {
        Self(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for DyckWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Build the factorization tree of `n >= 2`: one child per prime factor,
/// each child carrying the tree of its exponent. Exponent 1 ends the
/// recursion with a leaf.
pub fn prime_tower(n: u128) -> Result<FactorTree> {
    if n < 2 {
        return Err(Error::Domain(format!("prime_tower requires n >= 2, got {n}")));
    }
    Ok(FactorTree {
        children: tower_children(n)?,
    })
}

fn tower_children(n: u128) -> Result<Vec<FactorTree>> {
    factorize(n)?
        .factors()
        .iter()
        .map(|&(_, a)| {
            Ok(FactorTree {
                children: if a == 1 {
                    vec![]
                } else {
                    tower_children(a as u128)?
                },
            })
        })
        .collect()
}

/// Encode a tree as a Dyck word: for every child emit `1`, the child's
/// encoding, then `0`.
pub fn dyck_encode(tree: &FactorTree) -> DyckWord {
    let mut bits = String::with_capacity(2 * tree.node_count());
    encode_into(tree, &mut bits);
    DyckWord::from_validated(bits)
}

fn encode_into(tree: &FactorTree, out: &mut String) {
    for child in &tree.children {
        out.push('1');
        encode_into(child, out);
        out.push('0');
    }
}

/// The word of an integer: encode its factorization tree.
pub fn word_of(n: u128) -> Result<DyckWord> {
    Ok(dyck_encode(&prime_tower(n)?))
}

/// Structural classes of words the corpus queries care about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordClass {
    /// `10`
    Prime,
    /// `(10)^k`, k >= 2: product of k distinct primes
    Squarefree(u32),
    /// `1^k 0^k`, k >= 2: a bare tower chain
    PrimePowerChain(u32),
    Other,
}

pub fn classify_word(word: &DyckWord) -> WordClass {
    let s = word.as_str();
    if s == "10" {
        return WordClass::Prime;
    }
    let half = s.len() / 2;
    if s.as_bytes().chunks(2).all(|c| c == b"10") {
        return WordClass::Squarefree(half as u32);
    }
    if s.bytes().take(half).all(|b| b == b'1') && s.bytes().skip(half).all(|b| b == b'0') {
        return WordClass::PrimePowerChain(half as u32);
    }
    WordClass::Other
}

/// Count consecutive exact matches of `phrase` in a word stream. Matches
/// may overlap.
pub fn phrase_count<I, S>(words: I, phrase: &[DyckWord]) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if phrase.is_empty() {
        return 0;
    }
    let pattern: Vec<&str> = phrase.iter().map(|w| w.as_str()).collect();
    let mut window: std::collections::VecDeque<String> = std::collections::VecDeque::new();
    let mut count = 0u64;
    for w in words {
        window.push_back(w.as_ref().to_string());
        if window.len() > pattern.len() {
            window.pop_front();
        }
        if window.len() == pattern.len() && window.iter().zip(&pattern).all(|(a, b)| a == b) {
            count += 1;
        }
    }
    count
}

/// Length of the longest run of consecutive words that are all of
/// squarefree form `(10)^k` (k >= 1, primes included). Among any four
/// consecutive integers one is divisible by 4, so on a full corpus this
/// can never reach 4.
pub fn longest_squarefree_run<I, S>(words: I) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut best = 0u64;
    let mut run = 0u64;
    for w in words {
        let s = w.as_ref().as_bytes();
        if !s.is_empty() && s.len() % 2 == 0 && s.chunks(2).all(|c| c == b"10") {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Distinct-word counts at the requested corpus sizes. `checkpoints` are
/// values of n (corpus covers 2..=n, so n-1 words); they must ascend.
pub fn dictionary_growth<I, S>(words: I, checkpoints: &[u64]) -> Result<Vec<(u64, u64)>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("checkpoints must strictly ascend".into()));
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0usize;
    let mut n = 1u64; // word for integer n arrives at iteration n-1
    for w in words {
        n += 1;
        seen.insert(w.as_ref().to_string());
        while next < checkpoints.len() && checkpoints[next] == n {
            out.push((n, seen.len() as u64));
            next += 1;
        }
        if next == checkpoints.len() {
            break;
        }
    }
    if next < checkpoints.len() {
        return Err(Error::Domain(format!(
            "word stream ended before checkpoint {}",
            checkpoints[next]
        )));
    }
    Ok(out)
}
