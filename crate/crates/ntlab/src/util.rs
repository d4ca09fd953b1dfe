//! Shared plumbing: seed derivation, hashing, temperature sampling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

/// Name of the generator recorded in run manifests.
pub const RNG_NAME: &str = "chacha8";

/// Derive a component RNG from the run-level seed. Every source of
/// randomness in a run flows through this so that one seed replays the
/// whole experiment.
pub fn component_rng(master_seed: u64, component: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Finalize an incrementally-fed hasher into the usual hex digest.
pub fn sha256_hex_of(hasher: Sha256) -> String {
    hex(&hasher.finalize())
}

/// Temperatures below this degenerate to argmax sampling.
pub const ARGMAX_TEMPERATURE: f64 = 1e-4;

/// Temperature softmax over logits (−∞ entries keep probability 0).
/// At t = 1 this is the plain softmax; probabilities sum to 1.
pub fn softmax_temperature(logits: &[f64], t: f64) -> Vec<f64> {
    assert!(t > 0.0, "softmax temperature must be positive");
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        // no support at all: fall back to uniform
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let mut w: Vec<f64> = logits.iter().map(|&x| ((x - m) / t).exp()).collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    w
}

/// Sample an index from temperature-scaled logits. Temperatures below
/// [`ARGMAX_TEMPERATURE`] pick the argmax, breaking ties toward the
/// smallest index.
pub fn sample_from_logits<R: Rng>(logits: &[f64], t: f64, rng: &mut R) -> usize {
    if t < ARGMAX_TEMPERATURE {
        let mut best = 0usize;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let probs = softmax_temperature(logits, t);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1 // rounding slack: u landed beyond the final cumsum
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
