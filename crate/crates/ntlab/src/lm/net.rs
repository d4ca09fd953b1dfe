//! Forward and backward passes, written out by hand in f64.
//!
//! Layout per block (pre-norm): `x + Attn(LN1(x))` then
//! `x + MLP(LN2(x))`; a final LayerNorm feeds logits through the
//! transposed token embedding (tied head). Attention scores are scaled
//! by `1/sqrt(head_dim)`; next-word models mask keys to `j <= i`,
//! masked-token models attend everywhere. Gradients accumulate into a
//! flat buffer aligned with `ModelParams::data`, so the optimizer and
//! finite-difference checks treat the model as one vector.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::params::{LayerSlots, ModelParams, Slot};
use super::Objective;
use crate::dataset::{MaskedSentence, Sentence};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3))).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

fn mat<'a>(data: &'a [f64], slot: Slot, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), slot.of(data)).expect("slot matches shape")
}

fn add_mat(grads: &mut [f64], slot: Slot, src: &Array2<f64>) {
    for (dst, s) in slot.of_mut(grads).iter_mut().zip(src.iter()) {
        *dst += s;
    }
}

fn add_vec(grads: &mut [f64], slot: Slot, src: &Array1<f64>) {
    for (dst, s) in slot.of_mut(grads).iter_mut().zip(src.iter()) {
        *dst += s;
    }
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &ArrayView1::from(b);
    y
}

/// dW += x^T dy, db += column sums of dy; returns dx = dy W^T.
fn linear_backward(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    dy: &Array2<f64>,
    grads: &mut [f64],
    w_slot: Slot,
    b_slot: Slot,
) -> Array2<f64> {
    add_mat(grads, w_slot, &x.t().dot(dy));
    add_vec(grads, b_slot, &dy.sum_axis(Axis(0)));
    dy.dot(&w.t())
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &[f64], bias: &[f64]) -> (Array2<f64>, LnCache) {
    let (rows, d) = x.dim();
    let mut xhat = Array2::zeros((rows, d));
    let mut y = Array2::zeros((rows, d));
    let mut rstd = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat[[i, j]] = xh;
            y[[i, j]] = xh * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LnCache,
    gain: &[f64],
    grads: &mut [f64],
    g_slot: Slot,
    b_slot: Slot,
) -> Array2<f64> {
    let (rows, d) = dy.dim();
    let mut dx = Array2::zeros((rows, d));
    for i in 0..rows {
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for j in 0..d {
            let h = dy[[i, j]] * gain[j];
            c1 += h;
            c2 += h * ln.xhat[[i, j]];
        }
        c1 /= d as f64;
        c2 /= d as f64;
        for j in 0..d {
            let h = dy[[i, j]] * gain[j];
            dx[[i, j]] = (h - c1 - ln.xhat[[i, j]] * c2) * ln.rstd[i];
        }
    }
    {
        let dg = g_slot.of_mut(grads);
        for i in 0..rows {
            for j in 0..d {
                dg[j] += dy[[i, j]] * ln.xhat[[i, j]];
            }
        }
    }
    {
        let db = b_slot.of_mut(grads);
        for i in 0..rows {
            for j in 0..d {
                db[j] += dy[[i, j]];
            }
        }
    }
    dx
}

/// Row-wise masked softmax. Disallowed keys get probability zero; a
/// row with no allowed key at all (only possible with `exclude_self`)
/// becomes all zeros, i.e. that position attends to nothing.
fn masked_softmax_rows(mut scores: Array2<f64>, causal: bool, exclude_self: bool) -> Array2<f64> {
    let n = scores.nrows();
    for i in 0..n {
        let mut row = scores.row_mut(i);
        let limit = if causal { i + 1 } else { n };
        let mut mx = f64::NEG_INFINITY;
        for j in 0..limit {
            if !(exclude_self && j == i) {
                mx = mx.max(row[j]);
            }
        }
        if mx == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for j in 0..n {
            let allowed = j < limit && !(exclude_self && j == i);
            let e = if allowed { (row[j] - mx).exp() } else { 0.0 };
            row[j] = e;
            sum += e;
        }
        for j in 0..n {
            row[j] /= sum;
        }
    }
    scores
}

/// ds = p * (dp - sum_k p_k dp_k), row by row. Masked entries have
/// p = 0 and therefore gradient zero automatically.
fn softmax_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = probs.dim();
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        let mut dot = 0.0;
        for j in 0..cols {
            dot += probs[[i, j]] * dprobs[[i, j]];
        }
        for j in 0..cols {
            out[[i, j]] = probs[[i, j]] * (dprobs[[i, j]] - dot);
        }
    }
    out
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    h1: Array2<f64>,
    g: Array2<f64>,
}

pub(crate) struct Cache {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    y: Array2<f64>,
    pub logits: Array2<f64>,
}

pub(crate) fn forward_cached(p: &ModelParams, tokens: &[TokenId], causal: bool) -> Result<Cache> {
    let cfg = &p.config;
    let n = tokens.len();
    if n == 0 {
        return Err(Error::Model("empty input sequence".into()));
    }
    if n > cfg.context {
        return Err(Error::Model(format!(
            "sequence length {n} exceeds the context window {}",
            cfg.context
        )));
    }
    let vocab = cfg.vocab();
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(Error::Model(format!(
            "token id {bad} outside the model vocabulary of {vocab}"
        )));
    }
    let d = cfg.embed_dim();
    let heads = cfg.heads;
    let r = cfg.qk_dim;
    let dh = cfg.head_dim;
    let f = cfg.mlp_ratio * d;
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let tok = mat(&p.data, p.layout.tok_emb, vocab, d);
    let pos = mat(&p.data, p.layout.pos_emb, cfg.context, d);

    let mut x = Array2::zeros((n, d));
    for (i, &id) in ids.iter().enumerate() {
        let sum = &tok.row(id) + &pos.row(i);
        x.row_mut(i).assign(&sum);
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for (li, layer) in p.layout.layers.iter().enumerate() {
        let (a, ln1) = layer_norm(&x, layer.ln1_g.of(&p.data), layer.ln1_b.of(&p.data));
        let q = linear(&a, mat(&p.data, layer.wq, d, heads * r), layer.bq.of(&p.data));
        let k = linear(&a, mat(&p.data, layer.wk, d, heads * r), layer.bk.of(&p.data));
        let v = linear(&a, mat(&p.data, layer.wv, d, d), layer.bv.of(&p.data));
        let mut ctx = Array2::zeros((n, d));
        let mut att = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice(s![.., h * r..(h + 1) * r]);
            let kh = k.slice(s![.., h * r..(h + 1) * r]);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            if scores.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!(
                    "non-finite attention scores in layer {li}, head {h}"
                )));
            }
            let probs = masked_softmax_rows(scores, causal, cfg.exclude_self);
            let vh = v.slice(s![.., h * dh..(h + 1) * dh]);
            ctx.slice_mut(s![.., h * dh..(h + 1) * dh])
                .assign(&probs.dot(&vh));
            att.push(probs);
        }
        let attn_out = linear(&ctx, mat(&p.data, layer.wo, d, d), layer.bo.of(&p.data));
        let x_mid = &x + &attn_out;
        let (m, ln2) = layer_norm(&x_mid, layer.ln2_g.of(&p.data), layer.ln2_b.of(&p.data));
        let h1 = linear(&m, mat(&p.data, layer.w1, d, f), layer.b1.of(&p.data));
        let g = h1.mapv(gelu);
        let mlp_out = linear(&g, mat(&p.data, layer.w2, f, d), layer.b2.of(&p.data));
        let x_next = &x_mid + &mlp_out;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            att,
            ctx,
            ln2,
            m,
            h1,
            g,
        });
        x = x_next;
    }

    let (y, lnf) = layer_norm(&x, p.layout.lnf_g.of(&p.data), p.layout.lnf_b.of(&p.data));
    let logits = y.dot(&tok.t());
    Ok(Cache {
        ids,
        layers,
        lnf,
        y,
        logits,
    })
}

pub(crate) fn backward(p: &ModelParams, cache: &Cache, dlogits: &Array2<f64>, grads: &mut [f64]) {
    let cfg = &p.config;
    let n = cache.ids.len();
    let d = cfg.embed_dim();
    let heads = cfg.heads;
    let r = cfg.qk_dim;
    let dh = cfg.head_dim;
    let f = cfg.mlp_ratio * d;
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let tok = mat(&p.data, p.layout.tok_emb, cfg.vocab(), d);

    // Tied output head: logits = y E^T.
    let dy = dlogits.dot(&tok);
    add_mat(grads, p.layout.tok_emb, &dlogits.t().dot(&cache.y));

    let mut dx = layer_norm_backward(
        &dy,
        &cache.lnf,
        p.layout.lnf_g.of(&p.data),
        grads,
        p.layout.lnf_g,
        p.layout.lnf_b,
    );

    for (layer, lc) in p.layout.layers.iter().zip(&cache.layers).rev() {
        dx = backward_block(p, layer, lc, dx, grads, (d, heads, r, dh, f, scale));
    }

    let tok_off = p.layout.tok_emb.off;
    let pos_off = p.layout.pos_emb.off;
    for i in 0..n {
        let id = cache.ids[i];
        for j in 0..d {
            let g = dx[[i, j]];
            grads[tok_off + id * d + j] += g;
            grads[pos_off + i * d + j] += g;
        }
    }
}

fn backward_block(
    p: &ModelParams,
    layer: &LayerSlots,
    lc: &LayerCache,
    dx: Array2<f64>,
    grads: &mut [f64],
    dims: (usize, usize, usize, usize, usize, f64),
) -> Array2<f64> {
    let (d, heads, r, dh, f, scale) = dims;
    let n = lc.a.nrows();

    // MLP half: x_next = x_mid + W2 gelu(W1 m + b1) + b2.
    let dg = linear_backward(
        &lc.g,
        mat(&p.data, layer.w2, f, d),
        &dx,
        grads,
        layer.w2,
        layer.b2,
    );
    let dh1 = &dg * &lc.h1.mapv(gelu_prime);
    let dm = linear_backward(
        &lc.m,
        mat(&p.data, layer.w1, d, f),
        &dh1,
        grads,
        layer.w1,
        layer.b1,
    );
    let dx_mid = &dx
        + &layer_norm_backward(
            &dm,
            &lc.ln2,
            layer.ln2_g.of(&p.data),
            grads,
            layer.ln2_g,
            layer.ln2_b,
        );

    // Attention half: x_mid = x + Wo ctx + bo.
    let dctx = linear_backward(
        &lc.ctx,
        mat(&p.data, layer.wo, d, d),
        &dx_mid,
        grads,
        layer.wo,
        layer.bo,
    );
    let mut dq = Array2::zeros((n, heads * r));
    let mut dk = Array2::zeros((n, heads * r));
    let mut dv = Array2::zeros((n, d));
    for h in 0..heads {
        let probs = &lc.att[h];
        let vh = lc.v.slice(s![.., h * dh..(h + 1) * dh]);
        let dctxh = dctx.slice(s![.., h * dh..(h + 1) * dh]).to_owned();
        let dprobs = dctxh.dot(&vh.t());
        dv.slice_mut(s![.., h * dh..(h + 1) * dh])
            .assign(&probs.t().dot(&dctxh));
        let mut dscores = softmax_backward(probs, &dprobs);
        dscores *= scale;
        let qh = lc.q.slice(s![.., h * r..(h + 1) * r]);
        let kh = lc.k.slice(s![.., h * r..(h + 1) * r]);
        dq.slice_mut(s![.., h * r..(h + 1) * r])
            .assign(&dscores.dot(&kh));
        dk.slice_mut(s![.., h * r..(h + 1) * r])
            .assign(&dscores.t().dot(&qh));
    }
    let da_q = linear_backward(
        &lc.a,
        mat(&p.data, layer.wq, d, heads * r),
        &dq,
        grads,
        layer.wq,
        layer.bq,
    );
    let da_k = linear_backward(
        &lc.a,
        mat(&p.data, layer.wk, d, heads * r),
        &dk,
        grads,
        layer.wk,
        layer.bk,
    );
    let da_v = linear_backward(
        &lc.a,
        mat(&p.data, layer.wv, d, d),
        &dv,
        grads,
        layer.wv,
        layer.bv,
    );
    let da = &(&da_q + &da_k) + &da_v;
    &dx_mid
        + &layer_norm_backward(
            &da,
            &lc.ln1,
            layer.ln1_g.of(&p.data),
            grads,
            layer.ln1_g,
            layer.ln1_b,
        )
}

/// Mean negative log-likelihood plus, optionally, the logit gradient.
/// `pairs` maps logit rows to target ids; `norm` divides the sum.
fn cross_entropy(
    logits: &Array2<f64>,
    pairs: &[(usize, usize)],
    norm: f64,
    need_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let mut loss = 0.0;
    let mut dlogits = need_grad.then(|| Array2::zeros(logits.raw_dim()));
    for &(pos, target) in pairs {
        let row = logits.row(pos);
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + sum.ln();
        loss += lse - row[target];
        if let Some(dl) = dlogits.as_mut() {
            for j in 0..row.len() {
                dl[[pos, j]] += (row[j] - lse).exp() / norm;
            }
            dl[[pos, target]] -= 1.0 / norm;
        }
    }
    (loss / norm, dlogits)
}

fn nwp_objective(cache: &Cache, need_grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
    let n = cache.ids.len();
    if n < 2 {
        return Err(Error::Model(
            "next-word loss needs at least two tokens".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..n - 1).map(|p| (p, cache.ids[p + 1])).collect();
    Ok(cross_entropy(
        &cache.logits,
        &pairs,
        (n - 1) as f64,
        need_grad,
    ))
}

fn mlm_objective(
    cache: &Cache,
    masked: &MaskedSentence,
    vocab: usize,
    need_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let n = cache.ids.len();
    if masked.positions.is_empty() {
        return Err(Error::Model(
            "masked loss needs at least one masked position".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(masked.positions.len());
    for (&pos, &target) in masked.positions.iter().zip(&masked.targets) {
        if pos >= n {
            return Err(Error::Model(format!(
                "masked position {pos} outside a sentence of length {n}"
            )));
        }
        if (target as usize) >= vocab {
            return Err(Error::Model(format!(
                "masked target {target} outside the model vocabulary"
            )));
        }
        pairs.push((pos, target as usize));
    }
    Ok(cross_entropy(
        &cache.logits,
        &pairs,
        pairs.len() as f64,
        need_grad,
    ))
}

/// A batch of work for one of the two objectives.
#[derive(Clone, Copy)]
pub enum Task<'a> {
    Nwp(&'a [Sentence]),
    Mlm(&'a [MaskedSentence]),
}

impl Task<'_> {
    fn check(&self, p: &ModelParams) -> Result<usize> {
        let (len, want) = match self {
            Task::Nwp(b) => (b.len(), Objective::Nwp),
            Task::Mlm(b) => (b.len(), Objective::Mlm),
        };
        if p.config.objective != want {
            return Err(Error::Model(format!(
                "model was configured for {:?}, not {want:?}",
                p.config.objective
            )));
        }
        if len == 0 {
            return Err(Error::Model("empty batch".into()));
        }
        Ok(len)
    }
}

/// Mean loss over a batch (no gradients).
pub fn batch_loss(p: &ModelParams, task: Task) -> Result<f64> {
    let len = task.check(p)?;
    let losses: Result<Vec<f64>> = match task {
        Task::Nwp(batch) => batch
            .par_iter()
            .map(|sent| Ok(nwp_objective(&forward_cached(p, sent, true)?, false)?.0))
            .collect(),
        Task::Mlm(batch) => batch
            .par_iter()
            .map(|ms| {
                let cache = forward_cached(p, &ms.input, false)?;
                Ok(mlm_objective(&cache, ms, p.config.vocab(), false)?.0)
            })
            .collect(),
    };
    Ok(losses?.iter().sum::<f64>() / len as f64)
}

/// Mean loss and the gradient of that mean with respect to every
/// parameter. Sentences run in parallel; the per-sentence gradients
/// are folded in batch order so the result does not depend on the
/// number of worker threads.
pub fn batch_loss_and_grad(p: &ModelParams, task: Task) -> Result<(f64, Vec<f64>)> {
    let len = task.check(p)?;
    let per: Result<Vec<(f64, Vec<f64>)>> = match task {
        Task::Nwp(batch) => batch
            .par_iter()
            .map(|sent| {
                let cache = forward_cached(p, sent, true)?;
                let (loss, dlogits) = nwp_objective(&cache, true)?;
                let mut grads = vec![0.0; p.data.len()];
                backward(p, &cache, &dlogits.expect("gradient requested"), &mut grads);
                Ok((loss, grads))
            })
            .collect(),
        Task::Mlm(batch) => batch
            .par_iter()
            .map(|ms| {
                let cache = forward_cached(p, &ms.input, false)?;
                let (loss, dlogits) = mlm_objective(&cache, ms, p.config.vocab(), true)?;
                let mut grads = vec![0.0; p.data.len()];
                backward(p, &cache, &dlogits.expect("gradient requested"), &mut grads);
                Ok((loss, grads))
            })
            .collect(),
    };
    let per = per?;
    let mut grads = vec![0.0; p.data.len()];
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        for (dst, src) in grads.iter_mut().zip(g) {
            *dst += src;
        }
    }
    let inv = 1.0 / len as f64;
    loss *= inv;
    for v in &mut grads {
        *v *= inv;
    }
    Ok((loss, grads))
}

/// Logits for a whole sequence, masking per the configured objective.
pub fn forward_logits(p: &ModelParams, tokens: &[TokenId]) -> Result<Array2<f64>> {
    let causal = p.config.objective == Objective::Nwp;
    Ok(forward_cached(p, tokens, causal)?.logits)
}

/// Attention probabilities for every layer and head: `maps[l][h]` is
/// an S x S matrix whose rows sum to one over the allowed keys.
pub fn attention_maps(p: &ModelParams, tokens: &[TokenId]) -> Result<Vec<Vec<Array2<f64>>>> {
    let causal = p.config.objective == Objective::Nwp;
    let cache = forward_cached(p, tokens, causal)?;
    Ok(cache.layers.into_iter().map(|l| l.att).collect())
}

/// Central finite-difference check of the analytic gradient. Samples
/// `samples` random parameters, perturbs each by `±step`, and returns
/// the largest relative error observed. The denominator is floored so
/// parameters whose true gradient is essentially zero do not turn
/// rounding noise into spurious relative error.
pub fn gradient_check<R: Rng>(
    p: &mut ModelParams,
    task: Task,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> Result<f64> {
    let (_, grads) = batch_loss_and_grad(p, task)?;
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let idx = rng.gen_range(0..p.data.len());
        let orig = p.data[idx];
        p.data[idx] = orig + step;
        let hi = batch_loss(p, task)?;
        p.data[idx] = orig - step;
        let lo = batch_loss(p, task)?;
        p.data[idx] = orig;
        let fd = (hi - lo) / (2.0 * step);
        let an = grads[idx];
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-5);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::super::{ModelConfig, Objective};
    use super::*;
    use crate::dataset::MaskAction;
    use crate::util::component_rng;

    fn tiny(objective: Objective) -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            head_dim: 3,
            qk_dim: 3,
            context: 24,
            dict_size: 5,
            mlp_ratio: 4,
            objective,
            exclude_self: false,
        }
    }

    fn random_sentence<R: Rng>(len: usize, dict: usize, rng: &mut R) -> Sentence {
        (0..len).map(|_| rng.gen_range(0..dict) as u16).collect()
    }

    fn masked_from<R: Rng>(
        sentence: &Sentence,
        positions: &[usize],
        mask_id: u16,
        _rng: &mut R,
    ) -> MaskedSentence {
        let mut input = sentence.clone();
        let mut targets = Vec::new();
        for &p in positions {
            targets.push(input[p]);
            input[p] = mask_id;
        }
        MaskedSentence {
            input,
            positions: positions.to_vec(),
            targets,
            actions: vec![MaskAction::Mask; positions.len()],
        }
    }

    #[test]
    fn zero_queries_and_keys_give_uniform_attention() {
        let cfg = ModelConfig::desk(64, Objective::Nwp);
        let mut rng = component_rng(3, "lm/uniform-attn");
        let mut p = ModelParams::init(cfg, &mut rng).unwrap();
        for l in 0..cfg.layers {
            let slots = p.layout.layers[l].clone();
            for s in [slots.wq, slots.bq, slots.wk, slots.bk] {
                s.of_mut(&mut p.data).fill(0.0);
            }
        }
        let ids: Sentence = vec![3, 1, 4, 1, 5, 9];
        let maps = attention_maps(&p, &ids).unwrap();
        for layer in &maps {
            for head in layer {
                for i in 0..ids.len() {
                    for j in 0..ids.len() {
                        let expect = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                        assert!(
                            (head[[i, j]] - expect).abs() < 1e-12,
                            "row {i} col {j}: {}",
                            head[[i, j]]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn single_position_attends_to_itself() {
        let cfg = tiny(Objective::Nwp);
        let mut rng = component_rng(4, "lm/single-pos");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let maps = attention_maps(&p, &[2]).unwrap();
        for layer in &maps {
            for head in layer {
                assert_eq!(head.dim(), (1, 1));
                assert_eq!(head[[0, 0]], 1.0);
            }
        }
    }

    #[test]
    fn exclude_self_empties_the_diagonal() {
        let mut cfg = tiny(Objective::Nwp);
        cfg.exclude_self = true;
        let mut rng = component_rng(5, "lm/exclude-self");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let ids: Sentence = vec![0, 1, 2, 3, 4];
        let maps = attention_maps(&p, &ids).unwrap();
        for layer in &maps {
            for head in layer {
                // First position has no keys at all; later rows sum to
                // one with a zero diagonal.
                assert!(head.row(0).iter().all(|&v| v == 0.0));
                for i in 1..ids.len() {
                    assert_eq!(head[[i, i]], 0.0);
                    let sum: f64 = head.row(i).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }

        let mut cfg = tiny(Objective::Mlm);
        cfg.exclude_self = true;
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let maps = attention_maps(&p, &ids).unwrap();
        for layer in &maps {
            for head in layer {
                for i in 0..ids.len() {
                    assert_eq!(head[[i, i]], 0.0);
                    let sum: f64 = head.row(i).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_model_scores_uniform_loss() {
        let cfg = tiny(Objective::Nwp);
        let p = ModelParams::zeros(cfg).unwrap();
        let batch = vec![vec![0u16, 1, 2, 3, 4, 0, 1]];
        let loss = batch_loss(&p, Task::Nwp(&batch)).unwrap();
        assert!((loss - (cfg.vocab() as f64).ln()).abs() < 1e-12);

        let cfg = tiny(Objective::Mlm);
        let p = ModelParams::zeros(cfg).unwrap();
        let mut rng = component_rng(6, "lm/zero-mlm");
        let sent = random_sentence(10, 5, &mut rng);
        let ms = masked_from(&sent, &[2, 5, 7], cfg.mask_token() as u16, &mut rng);
        let batch = vec![ms];
        let loss = batch_loss(&p, Task::Mlm(&batch)).unwrap();
        assert!((loss - (cfg.vocab() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn fresh_model_starts_near_the_uniform_level() {
        let cfg = ModelConfig::desk(64, Objective::Nwp);
        let mut rng = component_rng(7, "lm/init-loss");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let batch = vec![random_sentence(64, 64, &mut rng)];
        let loss = batch_loss(&p, Task::Nwp(&batch)).unwrap();
        let ln_d = 64f64.ln();
        assert!(
            loss >= 0.95 * ln_d && loss <= 1.05 * ln_d,
            "initial loss {loss} vs ln D {ln_d}"
        );
    }

    #[test]
    fn losses_match_a_scalar_reference() {
        let cfg = tiny(Objective::Nwp);
        let mut rng = component_rng(8, "lm/loss-oracle");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let sent = random_sentence(9, 5, &mut rng);
        let logits = forward_logits(&p, &sent).unwrap();
        let mut reference = 0.0;
        for pos in 0..sent.len() - 1 {
            let row = logits.row(pos);
            let sum: f64 = row.iter().map(|&v| v.exp()).sum();
            reference += sum.ln() - row[sent[pos + 1] as usize];
        }
        reference /= (sent.len() - 1) as f64;
        let batch = vec![sent];
        let loss = batch_loss(&p, Task::Nwp(&batch)).unwrap();
        assert!((loss - reference).abs() < 1e-8, "{loss} vs {reference}");

        let cfg = tiny(Objective::Mlm);
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let sent = random_sentence(9, 5, &mut rng);
        let ms = masked_from(&sent, &[1, 4, 6], cfg.mask_token() as u16, &mut rng);
        let logits = forward_logits(&p, &ms.input).unwrap();
        let mut reference = 0.0;
        for (&pos, &target) in ms.positions.iter().zip(&ms.targets) {
            let row = logits.row(pos);
            let sum: f64 = row.iter().map(|&v| v.exp()).sum();
            reference += sum.ln() - row[target as usize];
        }
        reference /= ms.positions.len() as f64;
        let batch = vec![ms];
        let loss = batch_loss(&p, Task::Mlm(&batch)).unwrap();
        assert!((loss - reference).abs() < 1e-8, "{loss} vs {reference}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = component_rng(9, "lm/gradcheck");
        for exclude_self in [false, true] {
            // Next-word objective.
            let mut cfg = tiny(Objective::Nwp);
            cfg.exclude_self = exclude_self;
            let mut p = ModelParams::init(cfg, &mut rng).unwrap();
            let batch = vec![
                random_sentence(12, 5, &mut rng),
                random_sentence(8, 5, &mut rng),
            ];
            let rel = gradient_check(&mut p, Task::Nwp(&batch), 40, 1e-5, &mut rng).unwrap();
            assert!(rel < 1e-4, "nwp exclude_self={exclude_self}: {rel}");

            // Masked objective.
            let mut cfg = tiny(Objective::Mlm);
            cfg.exclude_self = exclude_self;
            let mut p = ModelParams::init(cfg, &mut rng).unwrap();
            let mask = cfg.mask_token() as u16;
            let s1 = random_sentence(12, 5, &mut rng);
            let s2 = random_sentence(9, 5, &mut rng);
            let batch = vec![
                masked_from(&s1, &[0, 3, 7, 11], mask, &mut rng),
                masked_from(&s2, &[2, 5], mask, &mut rng),
            ];
            let rel = gradient_check(&mut p, Task::Mlm(&batch), 40, 1e-5, &mut rng).unwrap();
            assert!(rel < 1e-4, "mlm exclude_self={exclude_self}: {rel}");
        }
    }

    #[test]
    fn causal_positions_ignore_the_future() {
        let cfg = tiny(Objective::Nwp);
        let mut rng = component_rng(10, "lm/causal");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let base = random_sentence(16, 5, &mut rng);
        let reference = forward_logits(&p, &base).unwrap();
        let j = 10;
        let mut perturbed = base.clone();
        perturbed[j] = (perturbed[j] + 1) % 5;
        let changed = forward_logits(&p, &perturbed).unwrap();
        for i in 0..j {
            for c in 0..cfg.vocab() {
                assert_eq!(
                    reference[[i, c]].to_bits(),
                    changed[[i, c]].to_bits(),
                    "row {i} must be bit-identical"
                );
            }
        }
        let tail_differs = (j..base.len())
            .any(|i| (0..cfg.vocab()).any(|c| reference[[i, c]] != changed[[i, c]]));
        assert!(tail_differs, "perturbation should reach later rows");
    }

    #[test]
    fn masked_models_see_both_directions() {
        let cfg = tiny(Objective::Mlm);
        let mut rng = component_rng(11, "lm/bidi");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        let base = random_sentence(12, 5, &mut rng);
        let reference = forward_logits(&p, &base).unwrap();
        let mut perturbed = base.clone();
        perturbed[10] = (perturbed[10] + 1) % 5;
        let changed = forward_logits(&p, &perturbed).unwrap();
        let early_differs = (0..cfg.vocab()).any(|c| reference[[0, c]] != changed[[0, c]]);
        assert!(early_differs, "later tokens must influence early rows");
    }

    #[test]
    fn input_validation() {
        let cfg = tiny(Objective::Nwp);
        let mut rng = component_rng(12, "lm/validation");
        let p = ModelParams::init(cfg, &mut rng).unwrap();
        assert!(forward_logits(&p, &[]).is_err());
        assert!(forward_logits(&p, &vec![0u16; cfg.context + 1]).is_err());
        assert!(forward_logits(&p, &[0, 7]).is_err()); // vocab is 7: ids 0..=6
        let single = vec![vec![3u16]];
        assert!(batch_loss(&p, Task::Nwp(&single)).is_err());
        let empty: Vec<Sentence> = Vec::new();
        assert!(batch_loss(&p, Task::Nwp(&empty)).is_err());
        let no_positions = vec![MaskedSentence {
            input: vec![0, 1, 2],
            positions: vec![],
            targets: vec![],
            actions: vec![],
        }];
        let mlm = ModelParams::init(tiny(Objective::Mlm), &mut rng).unwrap();
        assert!(batch_loss(&mlm, Task::Mlm(&no_positions)).is_err());
        // Objective mismatch is rejected rather than silently miscomputed.
        let batch = vec![random_sentence(6, 5, &mut rng)];
        assert!(batch_loss(&mlm, Task::Nwp(&batch)).is_err());
    }

    #[test]
    fn non_finite_parameters_are_caught_in_attention() {
        let cfg = tiny(Objective::Nwp);
        let mut rng = component_rng(13, "lm/nonfinite");
        let mut p = ModelParams::init(cfg, &mut rng).unwrap();
        let wq = p.layout.layers[0].wq;
        p.data[wq.off] = f64::INFINITY;
        let err = forward_logits(&p, &[0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
