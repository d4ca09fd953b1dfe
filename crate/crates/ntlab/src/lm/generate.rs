//! Autoregressive sampling and attention-map export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use super::net::{attention_maps, forward_cached};
use super::{ModelParams, Objective};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::util::sample_from_logits;

/// Sample `count` tokens after `prompt` at the given temperature.
/// Once the sequence outgrows the context window the model slides
/// along it, always reading the most recent `context` tokens. The
/// mask and pad specials never appear in output: their logits are
/// clamped to negative infinity before sampling.
pub fn generate<R: Rng>(
    p: &ModelParams,
    prompt: &[TokenId],
    count: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    if p.config.objective != Objective::Nwp {
        return Err(Error::Model(
            "only next-word models generate text autoregressively".into(),
        ));
    }
    if prompt.is_empty() {
        return Err(Error::Model("generation needs a non-empty prompt".into()));
    }
    let dict = p.config.dict_size;
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= dict) {
        return Err(Error::Model(format!(
            "prompt token {bad} outside the dictionary of {dict}"
        )));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::Model("temperature must be finite and >= 0".into()));
    }
    let context = p.config.context;
    let mut seq: Vec<TokenId> = prompt.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let window = &seq[seq.len().saturating_sub(context)..];
        let cache = forward_cached(p, window, true)?;
        let last = cache.logits.nrows() - 1;
        let mut logits: Vec<f64> = cache.logits.row(last).to_vec();
        for l in logits.iter_mut().skip(dict) {
            *l = f64::NEG_INFINITY;
        }
        let next = sample_from_logits(&logits, temperature, rng) as TokenId;
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Write every head's attention row for one query position:
/// `layer,head,query,key,weight`, one row per (layer, head, key).
pub fn export_attention_csv(
    p: &ModelParams,
    tokens: &[TokenId],
    query: usize,
    path: &Path,
) -> Result<()> {
    if query >= tokens.len() {
        return Err(Error::Model(format!(
            "query position {query} outside a sequence of length {}",
            tokens.len()
        )));
    }
    let maps = attention_maps(p, tokens)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "layer,head,query,key,weight")?;
    for (l, layer) in maps.iter().enumerate() {
        for (h, head) in layer.iter().enumerate() {
            for key in 0..tokens.len() {
                writeln!(w, "{l},{h},{query},{key},{:.12}", head[[query, key]])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
