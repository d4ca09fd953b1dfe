//! Word- and token-level metrics. Every function here is pure; the
//! test module re-derives each one with naive loops and requires
//! agreement to 1e-12.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// The Dyck word of every prime.
pub const PRIME_WORD: &str = "10";
/// Confusion-matrix class for words outside the top-k list.
pub const OTHER_LABEL: &str = "(other)";
/// Confusion-matrix / profile class for an absent word (a true
/// position with no prediction, or a prediction past the true end).
pub const NONE_LABEL: &str = "(none)";

/// Word accuracy: fraction of true positions whose predicted word
/// matches exactly. Positions past the end of the prediction count as
/// misses.
pub fn word_accuracy(pred: &[String], truth: &[String]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Model("word accuracy needs a non-empty truth".into()));
    }
    let hits = truth
        .iter()
        .enumerate()
        .filter(|(i, w)| pred.get(*i) == Some(w))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// KL divergence between smoothed empirical word distributions,
/// true relative to predicted, over the union of observed words.
/// Every observed word's count gets `eps` added in both distributions
/// before normalizing, which keeps the divergence finite even when a
/// true word never shows up in the prediction.
pub fn word_kl(pred: &[String], truth: &[String], eps: f64) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::Model("word KL needs non-empty sequences".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Model("smoothing must be positive".into()));
    }
    fn count(ws: &[String]) -> HashMap<&str, u64> {
        let mut m = HashMap::new();
        for w in ws {
            *m.entry(w.as_str()).or_insert(0) += 1;
        }
        m
    }
    let ct = count(truth);
    let cp = count(pred);
    let mut union: Vec<&str> = ct.keys().chain(cp.keys()).copied().collect();
    union.sort_unstable();
    union.dedup();
    let zt = truth.len() as f64 + eps * union.len() as f64;
    let zp = pred.len() as f64 + eps * union.len() as f64;
    let mut kl = 0.0;
    for w in union {
        let ft = (ct.get(w).copied().unwrap_or(0) as f64 + eps) / zt;
        let fp = (cp.get(w).copied().unwrap_or(0) as f64 + eps) / zp;
        kl += ft * (ft / fp).ln();
    }
    Ok(kl)
}

/// Precision/recall/F1 bookkeeping for one word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// TP/(TP+FP); undefined when the word is never predicted.
    pub precision: Option<f64>,
    /// TP/(TP+FN); undefined when the word never truly occurs.
    pub recall: Option<f64>,
    /// 2TP/(2TP+FP+FN); undefined only when all three counts are zero,
    /// and exactly 0 when TP = 0 but FP or FN is positive.
    pub f1: Option<f64>,
}

impl Prf1 {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let f1 = (2 * tp + fp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Per-word precision/recall/F1 over slot pairs (true, predicted). A
/// missing prediction can never be a true positive, so misses count
/// as false negatives and overflow predictions as false positives.
pub fn prf1_from_pairs<'a, I>(pairs: I, word: &str) -> Prf1
where
    I: IntoIterator<Item = (Option<&'a str>, Option<&'a str>)>,
{
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (t, p) in pairs {
        let t_is = t == Some(word);
        let p_is = p == Some(word);
        match (t_is, p_is) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    Prf1::from_counts(tp, fp, fn_)
}

/// Convenience wrapper over two plain word lists.
pub fn prf1(pred: &[String], truth: &[String], word: &str) -> Prf1 {
    let slots = pred.len().max(truth.len());
    prf1_from_pairs(
        (0..slots).map(|i| {
            (
                truth.get(i).map(String::as_str),
                pred.get(i).map(String::as_str),
            )
        }),
        word,
    )
}

/// One row of the per-word table, ordered by true frequency.
#[derive(Debug, Clone, Serialize)]
pub struct WordPrf1 {
    pub word: String,
    pub true_count: u64,
    pub pred_count: u64,
    #[serde(flatten)]
    pub scores: Prf1,
}

/// P/R/F1 for every word observed on either side, ordered by true
/// frequency (descending, ties lexicographic) to match the figure
/// convention.
pub fn prf1_table(pairs: &[(Option<String>, Option<String>)]) -> Vec<WordPrf1> {
    let mut true_counts: HashMap<&str, u64> = HashMap::new();
    let mut pred_counts: HashMap<&str, u64> = HashMap::new();
    for (t, p) in pairs {
        if let Some(t) = t {
            *true_counts.entry(t).or_insert(0) += 1;
        }
        if let Some(p) = p {
            *pred_counts.entry(p).or_insert(0) += 1;
        }
    }
    let mut words: Vec<&str> = true_counts.keys().chain(pred_counts.keys()).copied().collect();
    words.sort_unstable();
    words.dedup();
    let mut table: Vec<WordPrf1> = words
        .into_iter()
        .map(|w| WordPrf1 {
            word: w.to_owned(),
            true_count: true_counts.get(w).copied().unwrap_or(0),
            pred_count: pred_counts.get(w).copied().unwrap_or(0),
            scores: prf1_from_pairs(
                pairs.iter().map(|(t, p)| (t.as_deref(), p.as_deref())),
                w,
            ),
        })
        .collect();
    table.sort_by(|a, b| b.true_count.cmp(&a.true_count).then(a.word.cmp(&b.word)));
    table
}

/// Confusion matrix over word classes: the `k` most frequent true
/// words, a residual `(other)` class, and `(none)` for the absent side
/// of miss/overflow slots. Entries are counts normalized by the total
/// slot count, so the whole matrix sums to one.
#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    /// Class labels, `labels[k] = "(other)"`, `labels[k+1] = "(none)"`.
    pub labels: Vec<String>,
    /// Raw counts, `counts[true_class][pred_class]`.
    pub counts: Vec<Vec<u64>>,
    /// Counts normalized by `total`.
    pub matrix: Vec<Vec<f64>>,
    /// Total number of slots.
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn class_of(&self, word: Option<&str>) -> usize {
        let k = self.labels.len() - 2;
        match word {
            None => k + 1,
            Some(w) => self.labels[..k]
                .iter()
                .position(|l| l == w)
                .unwrap_or(k),
        }
    }

    /// Marginal over predictions for one class row (true side).
    pub fn row_marginal(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Marginal over truths for one class column (predicted side).
    pub fn col_marginal(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

pub fn confusion_matrix(
    pairs: &[(Option<String>, Option<String>)],
    k: usize,
) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::Model("confusion matrix needs at least one slot".into()));
    }
    let mut true_counts: HashMap<&str, u64> = HashMap::new();
    for (t, _) in pairs {
        if let Some(t) = t {
            *true_counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut by_freq: Vec<(&str, u64)> = true_counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let k = k.min(by_freq.len());
    let mut labels: Vec<String> = by_freq[..k].iter().map(|(w, _)| (*w).to_owned()).collect();
    labels.push(OTHER_LABEL.to_owned());
    labels.push(NONE_LABEL.to_owned());
    let classes = labels.len();
    let mut counts = vec![vec![0u64; classes]; classes];
    let class = |word: Option<&str>| -> usize {
        match word {
            None => k + 1,
            Some(w) => labels[..k].iter().position(|l| l == w).unwrap_or(k),
        }
    };
    for (t, p) in pairs {
        debug_assert!(t.is_some() || p.is_some(), "slot with neither side");
        counts[class(t.as_deref())][class(p.as_deref())] += 1;
    }
    let total = pairs.len() as u64;
    let matrix = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / total as f64).collect())
        .collect();
    Ok(ConfusionMatrix {
        labels,
        counts,
        matrix,
        total,
    })
}

/// The two prime-error distributions: what gets predicted where the
/// truth is the prime word, and what is true where the prediction is
/// the prime word. Each sums to one over its observed labels (the
/// absent side of an unmatched slot appears as `(none)`).
#[derive(Debug, Clone, Serialize)]
pub struct PrimeErrorProfile {
    pub predicted_at_true_prime: Vec<(String, f64)>,
    pub true_at_predicted_prime: Vec<(String, f64)>,
}

pub fn prime_error_profile(pairs: &[(Option<String>, Option<String>)]) -> PrimeErrorProfile {
    let gather = |select_true: bool| -> Vec<(String, f64)> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut total = 0u64;
        for (t, p) in pairs {
            let (anchor, report) = if select_true { (t, p) } else { (p, t) };
            if anchor.as_deref() == Some(PRIME_WORD) {
                *counts.entry(report.as_deref().unwrap_or(NONE_LABEL)).or_insert(0) += 1;
                total += 1;
            }
        }
        let mut out: Vec<(String, f64)> = counts
            .into_iter()
            .map(|(w, c)| (w.to_owned(), c as f64 / total as f64))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    };
    PrimeErrorProfile {
        predicted_at_true_prime: gather(true),
        true_at_predicted_prime: gather(false),
    }
}

/// Token accuracy: fraction of matching ids, over all positions or
/// over an explicit position set (e.g. the masked positions ℐ).
pub fn token_accuracy(
    pred: &[u16],
    truth: &[u16],
    positions: Option<&[usize]>,
) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Model(format!(
            "token accuracy needs equal lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    match positions {
        None => {
            if truth.is_empty() {
                return Err(Error::Model("token accuracy over an empty sequence".into()));
            }
            let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / truth.len() as f64)
        }
        Some(pos) => {
            if pos.is_empty() {
                return Err(Error::Model("token accuracy over an empty position set".into()));
            }
            let mut hits = 0usize;
            for &a in pos {
                if a >= truth.len() {
                    return Err(Error::Model(format!(
                        "position {a} outside a sequence of length {}",
                        truth.len()
                    )));
                }
                if pred[a] == truth[a] {
                    hits += 1;
                }
            }
            Ok(hits as f64 / pos.len() as f64)
        }
    }
}
