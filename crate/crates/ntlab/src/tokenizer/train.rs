//! Greedy byte-pair training. The corpus is held as one linked run of
//! token ids; a pair-occurrence index makes each merge proportional to
//! the number of occurrences it rewrites, with stale index entries
//! skipped lazily.

use super::{TokenId, Vocabulary, BASE_SYMBOLS, MAX_DICT_SIZE, NONE};
use crate::error::{Error, Result};
use std::collections::HashMap;

type Pair = (TokenId, TokenId);

/// Train a vocabulary of exactly `d` tokens on `text`. Merging stops
/// early only if no pair occurs at least twice, which is reported as an
/// error naming the achieved size.
pub fn train_bpe(text: &str, d: usize) -> Result<Vocabulary> {
    if d < BASE_SYMBOLS.len() {
        return Err(Error::Tokenizer(format!(
            "dictionary size {d} below base alphabet size {}",
            BASE_SYMBOLS.len()
        )));
    }
    if d > MAX_DICT_SIZE {
        return Err(Error::Tokenizer(format!(
            "dictionary size {d} exceeds capacity {MAX_DICT_SIZE}"
        )));
    }
    if text.is_empty() {
        return Err(Error::Tokenizer("cannot train on an empty corpus".into()));
    }

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

    let mut next: Vec<u32> = (1..=n as u32).collect();
    if n > 0 {
        next[n - 1] = NONE;
    }
    let mut prev: Vec<u32> = (0..n as u32).map(|i| i.wrapping_sub(1)).collect();
    prev[0] = NONE;
    let mut alive = vec![true; n];

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut positions: HashMap<Pair, Vec<u32>> = HashMap::new();
    for i in 0..n.saturating_sub(1) {
        let pair = (ids[i], ids[i + 1]);
        *counts.entry(pair).or_insert(0) += 1;
        positions.entry(pair).or_default().push(i as u32);
    }

    let mut strings: Vec<String> = BASE_SYMBOLS.iter().map(|c| c.to_string()).collect();
    let mut merges: Vec<Pair> = Vec::with_capacity(d - strings.len());

    while strings.len() < d {
        let Some((l, r)) = select_pair(&counts, &strings) else {
            return Err(Error::Tokenizer(format!(
                "no pair occurs twice; corpus supports a dictionary of {} tokens, {d} requested",
                strings.len()
            )));
        };
        let new_id = strings.len() as TokenId;
        let occurrences = positions.remove(&(l, r)).unwrap_or_default();
        for p in occurrences {
            let p = p as usize;
            if !alive[p] || ids[p] != l || next[p] == NONE {
                continue;
            }
            let q = next[p] as usize;
            if ids[q] != r {
                continue;
            }
            let lp = prev[p];
            let rq = next[q];
            *counts.entry((ids[p], ids[q])).or_insert(0) -= 1;
            if lp != NONE {
                *counts.entry((ids[lp as usize], ids[p])).or_insert(0) -= 1;
            }
            if rq != NONE {
                *counts.entry((ids[q], ids[rq as usize])).or_insert(0) -= 1;
            }

            ids[p] = new_id;
            alive[q] = false;
            next[p] = rq;
            if rq != NONE {
                prev[rq as usize] = p as u32;
            }

            if lp != NONE {
                let pair = (ids[lp as usize], new_id);
                *counts.entry(pair).or_insert(0) += 1;
                positions.entry(pair).or_default().push(lp);
            }
            if rq != NONE {
                let pair = (new_id, ids[rq as usize]);
                *counts.entry(pair).or_insert(0) += 1;
                positions.entry(pair).or_default().push(p as u32);
            }
        }
        debug_assert_eq!(counts.get(&(l, r)).copied().unwrap_or(0), 0);
        counts.remove(&(l, r));

        strings.push(format!("{}{}", strings[l as usize], strings[r as usize]));
        merges.push((l, r));
    }

    Vocabulary::from_merges(merges)
}

/// Argmax over pair counts under a total order: higher count first, then
/// lexicographically smaller concatenated string, then smaller (left,
/// right) strings. Pairs whose concatenation collides with an existing
/// token string are skipped so every token keeps a unique spelling.
fn select_pair(counts: &HashMap<Pair, i64>, strings: &[String]) -> Option<Pair> {
    let mut best: Option<(Pair, i64)> = None;
    for (&pair, &count) in counts {
        if count < 2 {
            continue;
        }
        if duplicates_existing(pair, strings) {
            continue;
        }
        best = match best {
            None => Some((pair, count)),
            Some((bp, bc)) => {
                if count > bc || (count == bc && pair_precedes(pair, bp, strings)) {
                    Some((pair, count))
                } else {
                    Some((bp, bc))
                }
            }
        };
    }
    best.map(|(pair, _)| pair)
}

fn duplicates_existing((l, r): Pair, strings: &[String]) -> bool {
    let ls = strings[l as usize].as_bytes();
    let rs = strings[r as usize].as_bytes();
    strings.iter().any(|s| {
        s.len() == ls.len() + rs.len()
            && s.as_bytes()[..ls.len()] == *ls
            && s.as_bytes()[ls.len()..] == *rs
    })
}

/// Strict "comes before" for the tie-break order.
fn pair_precedes(a: Pair, b: Pair, strings: &[String]) -> bool {
    let cat = |(l, r): Pair| {
        strings[l as usize]
            .bytes()
            .chain(strings[r as usize].bytes())
    };
    match cat(a).cmp(cat(b)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            let key = |(l, r): Pair| (&strings[l as usize], &strings[r as usize]);
            key(a) < key(b)
        }
    }
}
