//! Decoder-style transformer (GPT-2 shape) implemented from scratch in
//! f64: embeddings, pre-norm blocks with multi-head attention and GeLU
//! MLPs, a tied output head, manual backpropagation, Adam with warmup
//! plus cosine decay, and temperature sampling.

mod generate;
mod net;
mod params;
mod train;

pub use generate::{export_attention_csv, generate};
pub use net::{
    attention_maps, batch_loss, batch_loss_and_grad, forward_logits, gradient_check, Task,
};
pub use params::{param_count, ModelParams};
pub use train::{
    train, write_loss_curves, Adam, EarlyStopper, EpochRecord, StopDecision, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Training/inference objective. NWP uses causal attention, MLM
/// bidirectional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Nwp,
    Mlm,
}

/// Architecture hyperparameters. The embedding width is always
/// `heads * head_dim`; the model vocabulary is the trained dictionary
/// plus the mask and pad specials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Query/key width R per head (defaults to `head_dim`).
    pub qk_dim: usize,
    /// Context length L.
    pub context: usize,
    /// Trained dictionary size D (without specials).
    pub dict_size: usize,
    pub mlp_ratio: usize,
    pub objective: Objective,
    /// Drop the j = i term from every attention row, reproducing the
    /// source formula literally. Off by default (standard attention).
    #[serde(default)]
    pub exclude_self: bool,
}

impl ModelConfig {
    /// Full-scale preset: 12 layers, 12 heads of width 64, L = 1024.
    pub fn paper(dict_size: usize, objective: Objective) -> Self {
        Self {
            layers: 12,
            heads: 12,
            head_dim: 64,
            qk_dim: 64,
            context: 1024,
            dict_size,
            mlp_ratio: 4,
            objective,
            exclude_self: false,
        }
    }

    /// Small preset that trains in minutes on one core: 2 layers,
    /// 4 heads of width 16, L = 256.
    pub fn desk(dict_size: usize, objective: Objective) -> Self {
        Self {
            layers: 2,
            heads: 4,
            head_dim: 16,
            qk_dim: 16,
            context: 256,
            dict_size,
            mlp_ratio: 4,
            objective,
            exclude_self: false,
        }
    }

    /// Embedding width d.
    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Model vocabulary: dictionary plus mask and pad.
    pub fn vocab(&self) -> usize {
        self.dict_size + 2
    }

    pub fn mask_token(&self) -> usize {
        self.dict_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("qk_dim", self.qk_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Model(format!("{name} must be positive")));
            }
        }
        if self.context < 2 {
            return Err(Error::Model("context length must be at least 2".into()));
        }
        if self.dict_size < 2 {
            return Err(Error::Model("dictionary must hold at least 2 tokens".into()));
        }
        Ok(())
    }
}
