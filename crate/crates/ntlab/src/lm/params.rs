//! Model parameters as one flat f64 buffer plus a layout of named
//! slots. A flat buffer keeps the optimizer, gradient checks, and
//! checkpoint IO trivial: every consumer walks the same vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Checkpoint file magic.
const CHECKPOINT_MAGIC: &[u8; 4] = b"NTLM";

/// A contiguous region of the parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub off: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        &data[self.off..self.off + self.len]
    }

    pub fn of_mut<'a>(&self, data: &'a mut [f64]) -> &'a mut [f64] {
        &mut data[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Slot,
    pub pos_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: Slot,
    pub lnf_b: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim();
        let qk = cfg.heads * cfg.qk_dim;
        let f = cfg.mlp_ratio * d;
        let mut off = 0;
        let mut slot = |len: usize| {
            let s = Slot { off, len };
            off += len;
            s
        };
        let tok_emb = slot(cfg.vocab() * d);
        let pos_emb = slot(cfg.context * d);
        let layers = (0..cfg.layers)
            .map(|_| LayerSlots {
                ln1_g: slot(d),
                ln1_b: slot(d),
                wq: slot(d * qk),
                bq: slot(qk),
                wk: slot(d * qk),
                bk: slot(qk),
                wv: slot(d * d),
                bv: slot(d),
                wo: slot(d * d),
                bo: slot(d),
                ln2_g: slot(d),
                ln2_b: slot(d),
                w1: slot(d * f),
                b1: slot(f),
                w2: slot(f * d),
                b2: slot(d),
            })
            .collect();
        let lnf_g = slot(d);
        let lnf_b = slot(d);
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            total: off,
        }
    }
}

/// Total parameter count for a configuration, without allocating it.
pub fn param_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).total
}

/// A concrete model: configuration plus one flat parameter vector.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub data: Vec<f64>,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Standard initialization: every weight matrix and both embedding
    /// tables drawn from N(0, 0.02); biases zero; LayerNorm gains one.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let normal = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut data = vec![0.0; layout.total];
        let fill = |slot: Slot, data: &mut [f64], rng: &mut R| {
            for v in slot.of_mut(data) {
                *v = normal.sample(rng);
            }
        };
        fill(layout.tok_emb, &mut data, rng);
        fill(layout.pos_emb, &mut data, rng);
        for layer in &layout.layers {
            for mat in [layer.wq, layer.wk, layer.wv, layer.wo, layer.w1, layer.w2] {
                fill(mat, &mut data, rng);
            }
            for gain in [layer.ln1_g, layer.ln2_g] {
                gain.of_mut(&mut data).fill(1.0);
            }
        }
        layout.lnf_g.of_mut(&mut data).fill(1.0);
        Ok(Self {
            config,
            data,
            layout,
        })
    }

    /// All-zero parameters; with a zero model every logit is zero, so
    /// the predictive distribution is exactly uniform. Used by tests.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            config,
            data: vec![0.0; layout.total],
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    /// Serialize to a binary checkpoint: magic, JSON config, then the
    /// raw little-endian f64 buffer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{}: not a model checkpoint",
                path.display()
            )));
        }
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)?;
        let mut cfg_bytes = vec![0u8; u32::from_le_bytes(len4) as usize];
        r.read_exact(&mut cfg_bytes)?;
        let config: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
        config.validate()?;
        let layout = Layout::new(&config);
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)?;
        let count = u64::from_le_bytes(len8) as usize;
        if count != layout.total {
            return Err(Error::Format(format!(
                "{}: checkpoint holds {count} parameters but the config implies {}",
                path.display(),
                layout.total
            )));
        }
        let mut data = vec![0.0; count];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: checkpoint contains a non-finite parameter",
                    path.display()
                )));
            }
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(Error::Format(format!(
                "{}: trailing bytes after parameter payload",
                path.display()
            )));
        }
        Ok(Self {
            config,
            data,
            layout,
        })
    }
}
