//! Position-wise alignment of predicted and true word sequences.
//!
//! Generated token ids decode to a character stream; splitting on
//! spaces recovers words. A generated fragment that is not a valid
//! Dyck word stays in the sequence (it simply mismatches everything)
//! and is tallied, never dropped.

use serde::Serialize;

use crate::corpus::DyckWord;

/// Split a decoded character stream into words. Consecutive or
/// leading separators never occur in well-formed text, but empty
/// fragments are filtered defensively.
pub fn words_from_text(text: &str) -> Vec<String> {
    text.split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Predicted and true word lists compared "with respect to the same
/// location".
#[derive(Debug, Clone, Serialize)]
pub struct WordAlignment {
    pub pred: Vec<String>,
    pub truth: Vec<String>,
    /// Predicted fragments that violate the Dyck invariants.
    pub invalid_pred: usize,
    /// True-side fragments that violate them (possible at window
    /// boundaries, where a word may be cut in half).
    pub invalid_true: usize,
}

impl WordAlignment {
    pub fn new(pred: Vec<String>, truth: Vec<String>) -> Self {
        let invalid = |ws: &[String]| ws.iter().filter(|w| DyckWord::parse(w).is_err()).count();
        let invalid_pred = invalid(&pred);
        let invalid_true = invalid(&truth);
        Self {
            pred,
            truth,
            invalid_pred,
            invalid_true,
        }
    }

    pub fn from_texts(pred_text: &str, true_text: &str) -> Self {
        Self::new(words_from_text(pred_text), words_from_text(true_text))
    }

    /// Number of position-wise pairs: min(ℓ_pred, ℓ_true).
    pub fn pairs(&self) -> usize {
        self.pred.len().min(self.truth.len())
    }

    /// True positions with no prediction at all.
    pub fn misses(&self) -> usize {
        self.truth.len().saturating_sub(self.pred.len())
    }

    /// Predicted positions beyond the end of the true sequence.
    pub fn overflow(&self) -> usize {
        self.pred.len().saturating_sub(self.truth.len())
    }

    /// Total comparison slots: max(ℓ_pred, ℓ_true).
    pub fn slots(&self) -> usize {
        self.pred.len().max(self.truth.len())
    }

    /// Slot view as (true word, predicted word); `None` marks the
    /// missing side of a miss or overflow slot.
    pub fn slot_pairs(&self) -> impl Iterator<Item = (Option<&str>, Option<&str>)> {
        (0..self.slots()).map(|i| {
            (
                self.truth.get(i).map(String::as_str),
                self.pred.get(i).map(String::as_str),
            )
        })
    }
}
