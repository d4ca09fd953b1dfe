//! First-order Markov baseline over tokens. The transition matrix is
//! fitted in closed form from bigram counts (the NLL minimizer); a
//! gradient path using Adam on the same NLL exists behind a separate
//! constructor purely as a cross-check and must land on the counts.

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::util::{sample_from_logits, softmax_temperature};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MATRIX_MAGIC: &[u8; 4] = b"NTMC";

/// Default add-α smoothing for evaluation fits (avoids infinite NLL on
/// unseen bigrams).
pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Row-stochastic D×D matrix: `prob(j, i)` is the probability of token i
/// immediately after token j. Rows for tokens never seen as a
/// predecessor are uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    d: usize,
    alpha: f64,
    rows: Vec<f64>,
    unigram: Vec<f64>,
}

/// JSON header stored in front of the binary matrix payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub d: usize,
    pub alpha: f64,
    pub source: String,
}

fn bigram_counts(stream: &[TokenId], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if stream.len() < 2 {
        return Err(Error::Model(format!(
            "need at least 2 tokens to fit transitions, got {}",
            stream.len()
        )));
    }
    if let Some(&bad) = stream.iter().find(|&&t| (t as usize) >= d) {
        return Err(Error::Model(format!(
            "token id {bad} outside dictionary of size {d}"
        )));
    }
    let mut counts = vec![0.0f64; d * d];
    let mut unigram = vec![0.0f64; d];
    for w in stream.windows(2) {
        counts[w[0] as usize * d + w[1] as usize] += 1.0;
    }
    for &t in stream {
        unigram[t as usize] += 1.0;
    }
    let total = stream.len() as f64;
    for u in &mut unigram {
        *u /= total;
    }
    Ok((counts, unigram))
}

impl TransitionMatrix {
    /// Fit from bigram counts with add-α smoothing. α = 0 gives the
    /// exact maximum-likelihood rows; rows with no observations fall
    /// back to uniform.
    pub fn fit(stream: &[TokenId], d: usize, alpha: f64) -> Result<Self> {
        if alpha < 0.0 {
            return Err(Error::Model("smoothing α must be non-negative".into()));
        }
        let (counts, unigram) = bigram_counts(stream, d)?;
        let mut rows = counts;
        for j in 0..d {
            let row = &mut rows[j * d..(j + 1) * d];
            let total: f64 = row.iter().sum();
            if total + alpha > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v + alpha) / (total + alpha * d as f64);
                }
            } else {
                row.fill(1.0 / d as f64);
            }
        }
        let m = Self {
            d,
            alpha,
            rows,
            unigram,
        };
        m.check_invariants()?;
        Ok(m)
    }

    /// Gradient fit: Adam on the empirical average NLL with rows
    /// parameterized as softmax logits. Converges to the α = 0 count
    /// solution; exists to mirror the reference procedure.
    pub fn fit_adam(stream: &[TokenId], d: usize, steps: usize, lr: f64) -> Result<Self> {
        let (counts, unigram) = bigram_counts(stream, d)?;
        let row_totals: Vec<f64> = (0..d)
            .map(|j| counts[j * d..(j + 1) * d].iter().sum())
            .collect();
        let n: f64 = row_totals.iter().sum();

        let mut w = vec![0.0f64; d * d];
        let mut m1 = vec![0.0f64; d * d];
        let mut m2 = vec![0.0f64; d * d];
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut probs = vec![0.0f64; d];
        for step in 1..=steps {
            for j in 0..d {
                if row_totals[j] == 0.0 {
                    continue; // no data: logits stay 0, row stays uniform
                }
                let row = &w[j * d..(j + 1) * d];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..d {
                    probs[i] = (row[i] - max).exp();
                    z += probs[i];
                }
                for p in probs.iter_mut() {
                    *p /= z;
                }
                for i in 0..d {
                    let g = (probs[i] * row_totals[j] - counts[j * d + i]) / n;
                    let k = j * d + i;
                    m1[k] = b1 * m1[k] + (1.0 - b1) * g;
                    m2[k] = b2 * m2[k] + (1.0 - b2) * g * g;
                    let mh = m1[k] / (1.0 - b1.powi(step as i32));
                    let vh = m2[k] / (1.0 - b2.powi(step as i32));
                    w[k] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }

        let mut rows = vec![0.0f64; d * d];
        for j in 0..d {
            rows[j * d..(j + 1) * d]
                .copy_from_slice(&softmax_temperature(&w[j * d..(j + 1) * d], 1.0));
        }
        let m = Self {
            d,
            alpha: 0.0,
            rows,
            unigram,
        };
        m.check_invariants()?;
        Ok(m)
    }

    /// The maximum-entropy chain: every transition equally likely.
    pub fn uniform(d: usize) -> Self {
        Self {
            d,
            alpha: 0.0,
            rows: vec![1.0 / d as f64; d * d],
            unigram: vec![1.0 / d as f64; d],
        }
    }

    pub fn dict_size(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn row(&self, j: TokenId) -> &[f64] {
        &self.rows[j as usize * self.d..(j as usize + 1) * self.d]
    }

    pub fn prob(&self, j: TokenId, i: TokenId) -> f64 {
        self.rows[j as usize * self.d + i as usize]
    }

    pub fn unigram(&self) -> &[f64] {
        &self.unigram
    }

    fn check_invariants(&self) -> Result<()> {
        for j in 0..self.d {
            let row = &self.rows[j * self.d..(j + 1) * self.d];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::Model(format!("row {j} has an invalid entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!("row {j} sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    /// Average negative log-likelihood in nats per transition:
    /// mean over i of −ln Φ[t_{i−1}][t_i]. Zero transitions give +∞.
    pub fn nll(&self, stream: &[TokenId]) -> Result<f64> {
        if stream.len() < 2 {
            return Err(Error::Model("NLL needs at least one transition".into()));
        }
        if let Some(&bad) = stream.iter().find(|&&t| (t as usize) >= self.d) {
            return Err(Error::Model(format!(
                "token id {bad} outside dictionary of size {}",
                self.d
            )));
        }
        let mut total = 0.0f64;
        for w in stream.windows(2) {
            let p = self.prob(w[0], w[1]);
            if p == 0.0 {
                return Ok(f64::INFINITY);
            }
            total -= p.ln();
        }
        Ok(total / (stream.len() - 1) as f64)
    }

    /// Continue a prompt by `length` tokens, sampling each successor
    /// from softmax(ln Φ[prev] / T). T = 1 reproduces the chain itself;
    /// tiny T degenerates to argmax (smallest id wins ties).
    pub fn generate<R: Rng>(
        &self,
        prompt: &[TokenId],
        length: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<TokenId>> {
        let Some(&last) = prompt.last() else {
            return Err(Error::Model("generation needs a non-empty prompt".into()));
        };
        if (last as usize) >= self.d {
            return Err(Error::Model(format!(
                "prompt token {last} outside dictionary of size {}",
                self.d
            )));
        }
        let mut prev = last;
        let mut out = Vec::with_capacity(length);
        let mut logits = vec![0.0f64; self.d];
        for _ in 0..length {
            for (i, slot) in logits.iter_mut().enumerate() {
                *slot = self.prob(prev, i as TokenId).ln();
            }
            let next = sample_from_logits(&logits, temperature, rng) as TokenId;
            out.push(next);
            prev = next;
        }
        Ok(out)
    }

    /// Persist as a JSON header followed by the dense f64 payload
    /// (rows, then the unigram distribution), all little-endian.
    pub fn save(&self, path: &Path, source: &str) -> Result<()> {
        let header = serde_json::to_vec(&MatrixHeader {
            d: self.d,
            alpha: self.alpha,
            source: source.to_string(),
        })?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MATRIX_MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for &v in self.rows.iter().chain(&self.unigram) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, MatrixHeader)> {
        let mut file = std::fs::File::open(path)?;
        let mut fixed = [0u8; 8];
        file.read_exact(&mut fixed)
            .map_err(|_| Error::Format("matrix file shorter than its magic".into()))?;
        if &fixed[0..4] != MATRIX_MAGIC {
            return Err(Error::Format("bad transition-matrix magic".into()));
        }
        let header_len = u32::from_le_bytes(fixed[4..8].try_into().unwrap()) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::Format("matrix header truncated".into()))?;
        let header: MatrixHeader = serde_json::from_slice(&header_bytes)?;

        let mut body = Vec::new();
        file.read_to_end(&mut body)?;
        let want = (header.d * header.d + header.d) * 8;
        if body.len() != want {
            return Err(Error::Format(format!(
                "matrix payload holds {} bytes, header promises {want}",
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let rows: Vec<f64> = values.by_ref().take(header.d * header.d).collect();
        let unigram: Vec<f64> = values.collect();
        let m = Self {
            d: header.d,
            alpha: header.alpha,
            rows,
            unigram,
        };
        m.check_invariants()?;
        Ok((m, header))
    }
}
