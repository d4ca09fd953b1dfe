//! Model-in-the-loop evaluation: drive a sequence model over test
//! instances, align the decoded words, and aggregate the metric suite
//! into reports; sweep temperature and masking-probability grids.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::align::WordAlignment;
use super::metrics::{
    confusion_matrix, prf1_table, prime_error_profile, token_accuracy, word_accuracy, word_kl,
    ConfusionMatrix, PrimeErrorProfile, WordPrf1,
};
use crate::dataset::{mask_sentence, MaskedSentence, Sentence};
use crate::error::{Error, Result};
use crate::lm;
use crate::markov::TransitionMatrix;
use crate::tokenizer::{TokenId, Vocabulary};
use crate::util::{component_rng, sample_from_logits};

/// Anything that can be scored: continue a prompt token by token
/// (next-word models) and/or reconstruct masked positions (masked
/// models). A model may support only one of the two; the other returns
/// an error.
pub trait SequenceModel {
    fn model_name(&self) -> &str;
    fn dict_size(&self) -> usize;
    /// Sample `count` continuation tokens after `prompt`.
    fn continue_tokens(
        &self,
        prompt: &[TokenId],
        count: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>>;
    /// Return the full input sequence with every masked position
    /// replaced by a sampled prediction.
    fn fill_masks(
        &self,
        masked: &MaskedSentence,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>>;
}

impl SequenceModel for lm::ModelParams {
    fn model_name(&self) -> &str {
        match self.config.objective {
            lm::Objective::Nwp => "transformer-nwp",
            lm::Objective::Mlm => "transformer-mlm",
        }
    }

    fn dict_size(&self) -> usize {
        self.config.dict_size
    }

    fn continue_tokens(
        &self,
        prompt: &[TokenId],
        count: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>> {
        lm::generate(self, prompt, count, temperature, rng)
    }

    fn fill_masks(
        &self,
        masked: &MaskedSentence,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>> {
        if self.config.objective != lm::Objective::Mlm {
            return Err(Error::Model(
                "only masked models reconstruct masked positions".into(),
            ));
        }
        // One bidirectional pass over the corrupted input scores every
        // masked position at once.
        let logits = lm::forward_logits(self, &masked.input)?;
        let dict = self.config.dict_size;
        let mut out = masked.input.clone();
        for &pos in &masked.positions {
            let mut row: Vec<f64> = logits.row(pos).to_vec();
            for l in row.iter_mut().skip(dict) {
                *l = f64::NEG_INFINITY;
            }
            out[pos] = sample_from_logits(&row, temperature, rng) as TokenId;
        }
        Ok(out)
    }
}

impl SequenceModel for TransitionMatrix {
    fn model_name(&self) -> &str {
        "markov"
    }

    fn dict_size(&self) -> usize {
        self.dict_size()
    }

    fn continue_tokens(
        &self,
        prompt: &[TokenId],
        count: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>> {
        self.generate(prompt, count, temperature, rng)
    }

    fn fill_masks(
        &self,
        _masked: &MaskedSentence,
        _temperature: f64,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TokenId>> {
        Err(Error::Model(
            "the first-order baseline only supports next-word evaluation".into(),
        ))
    }
}

/// One next-word evaluation instance: the model reads `prompt` and
/// must reproduce `target`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalInstance {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Cut `count` non-overlapping (prompt, target) windows from a token
/// stream, consecutively from the start.
pub fn nwp_instances(
    tokens: &[TokenId],
    prompt_len: usize,
    target_len: usize,
    count: usize,
) -> Result<Vec<EvalInstance>> {
    if prompt_len == 0 || target_len == 0 || count == 0 {
        return Err(Error::Model(
            "instances need positive prompt length, target length, and count".into(),
        ));
    }
    let stride = prompt_len + target_len;
    if tokens.len() < stride * count {
        return Err(Error::Model(format!(
            "{count} instances of {stride} tokens need {} tokens, stream has {}",
            stride * count,
            tokens.len()
        )));
    }
    Ok((0..count)
        .map(|i| {
            let at = i * stride;
            EvalInstance {
                prompt: tokens[at..at + prompt_len].to_vec(),
                target: tokens[at + prompt_len..at + stride].to_vec(),
            }
        })
        .collect())
}

/// Everything measured on one model at one sampling temperature.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub model: String,
    pub temperature: f64,
    /// Masking probability, for masked-model reports only.
    pub mask_prob: Option<f64>,
    /// Number of evaluation instances averaged over.
    pub m: usize,
    pub per_sequence_accuracy: Vec<f64>,
    pub per_sequence_kl: Vec<f64>,
    /// Arithmetic mean of the per-sequence values.
    pub mean_accuracy: f64,
    pub mean_kl: f64,
    /// Per-word table over pooled slots, ordered by true frequency.
    pub prf1: Vec<WordPrf1>,
    pub confusion: ConfusionMatrix,
    pub prime_profile: PrimeErrorProfile,
    pub invalid_pred_words: u64,
    pub invalid_true_words: u64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Score a next-word model on a set of instances at one temperature.
/// Each instance gets its own seeded stream derived from the master
/// seed, the temperature bits, and the instance index, so a report is
/// reproducible and two temperatures never share draws.
pub fn evaluate_nwp<M: SequenceModel>(
    model: &M,
    vocab: &Vocabulary,
    instances: &[EvalInstance],
    temperature: f64,
    confusion_top_k: usize,
    seed: u64,
) -> Result<MetricReport> {
    if instances.is_empty() {
        return Err(Error::Model("evaluation needs at least one instance".into()));
    }
    let mut per_acc = Vec::with_capacity(instances.len());
    let mut per_kl = Vec::with_capacity(instances.len());
    let mut pooled: Vec<(Option<String>, Option<String>)> = Vec::new();
    let mut invalid_pred = 0u64;
    let mut invalid_true = 0u64;
    for (i, inst) in instances.iter().enumerate() {
        let mut rng = component_rng(
            seed,
            &format!("eval/nwp/{:016x}/{i}", temperature.to_bits()),
        );
        let pred = model.continue_tokens(&inst.prompt, inst.target.len(), temperature, &mut rng)?;
        let pred_text = vocab.decode(&pred)?;
        let true_text = vocab.decode(&inst.target)?;
        let align = WordAlignment::from_texts(&pred_text, &true_text);
        if align.truth.is_empty() {
            return Err(Error::Model(format!(
                "instance {i}: target window decodes to no words"
            )));
        }
        per_acc.push(word_accuracy(&align.pred, &align.truth)?);
        let eps = 1.0 / align.truth.len() as f64;
        per_kl.push(word_kl(&align.pred, &align.truth, eps)?);
        invalid_pred += align.invalid_pred as u64;
        invalid_true += align.invalid_true as u64;
        pooled.extend(
            align
                .slot_pairs()
                .map(|(t, p)| (t.map(str::to_owned), p.map(str::to_owned))),
        );
    }
    Ok(MetricReport {
        model: model.model_name().to_owned(),
        temperature,
        mask_prob: None,
        m: instances.len(),
        mean_accuracy: mean(&per_acc),
        mean_kl: mean(&per_kl),
        per_sequence_accuracy: per_acc,
        per_sequence_kl: per_kl,
        prf1: prf1_table(&pooled),
        confusion: confusion_matrix(&pooled, confusion_top_k)?,
        prime_profile: prime_error_profile(&pooled),
        invalid_pred_words: invalid_pred,
        invalid_true_words: invalid_true,
    })
}

/// One report per temperature, same instances throughout.
pub fn evaluate_nwp_grid<M: SequenceModel>(
    model: &M,
    vocab: &Vocabulary,
    instances: &[EvalInstance],
    temperatures: &[f64],
    confusion_top_k: usize,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    temperatures
        .iter()
        .map(|&t| evaluate_nwp(model, vocab, instances, t, confusion_top_k, seed))
        .collect()
}

/// One cell of the masking-probability x temperature grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MlmCell {
    pub mask_prob: f64,
    pub temperature: f64,
    /// Token accuracy over the masked positions only.
    pub masked_accuracy: f64,
    /// Token accuracy over all positions (unmasked ones are copied
    /// through, so this is never below the masked value).
    pub full_accuracy: f64,
    pub m: usize,
}

/// Sweep the full (p_m, T) lattice. The corruption of instance `i` at
/// a given p_m is drawn once, independent of temperature, so every
/// cell in a row scores the model on identical inputs; only the
/// sampling of replacements varies with T.
pub fn evaluate_mlm_grid<M: SequenceModel>(
    model: &M,
    sentences: &[Sentence],
    mask_probs: &[f64],
    temperatures: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<MlmCell>> {
    if sentences.is_empty() || mask_probs.is_empty() || temperatures.is_empty() || m == 0 {
        return Err(Error::Model(
            "the grid needs sentences, mask probabilities, temperatures, and m >= 1".into(),
        ));
    }
    let dict = model.dict_size();
    let mask_id = dict as TokenId;
    let mut cells = Vec::with_capacity(mask_probs.len() * temperatures.len());
    for &p_m in mask_probs {
        if !(0.0..=1.0).contains(&p_m) {
            return Err(Error::Model(format!("mask probability {p_m} out of range")));
        }
        let masked: Vec<(usize, MaskedSentence)> = (0..m)
            .map(|i| {
                let sentence = &sentences[i % sentences.len()];
                let mut rng =
                    component_rng(seed, &format!("eval/mlm/mask/{:016x}/{i}", p_m.to_bits()));
                (
                    i % sentences.len(),
                    mask_sentence(sentence, p_m, dict, mask_id, &mut rng),
                )
            })
            .collect();
        if let Some((i, _)) = masked.iter().find(|(_, ms)| ms.positions.is_empty()) {
            return Err(Error::Model(format!(
                "mask probability {p_m} selects no positions in a sentence of length {}",
                sentences[*i].len()
            )));
        }
        for &t in temperatures {
            let mut masked_sum = 0.0;
            let mut full_sum = 0.0;
            for (i, (si, ms)) in masked.iter().enumerate() {
                let mut rng = component_rng(
                    seed,
                    &format!(
                        "eval/mlm/fill/{:016x}/{:016x}/{i}",
                        p_m.to_bits(),
                        t.to_bits()
                    ),
                );
                let filled = model.fill_masks(ms, t, &mut rng)?;
                let original = &sentences[*si];
                masked_sum += token_accuracy(&filled, original, Some(&ms.positions))?;
                full_sum += token_accuracy(&filled, original, None)?;
            }
            cells.push(MlmCell {
                mask_prob: p_m,
                temperature: t,
                masked_accuracy: masked_sum / m as f64,
                full_accuracy: full_sum / m as f64,
                m,
            });
        }
    }
    Ok(cells)
}
