//! Declarative run configuration. Every key is optional; resolution
//! order is command-line flag, then config file, then built-in
//! default. Unknown keys are rejected so typos surface as errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub deterministic: Option<bool>,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub tokenize: TokenizeSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub markov: MarkovSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub grid: GridSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub from: Option<u64>,
    pub to: Option<u64>,
    pub segment: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeSection {
    pub dict_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSection {
    pub alpha: Option<f64>,
}

/// Architecture knobs; a preset fills everything, these override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub qk_dim: Option<usize>,
    pub context: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub exclude_self: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub min_lr_frac: Option<f64>,
    pub mask_prob: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub count: Option<usize>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub temperatures: Option<Vec<f64>>,
    pub m: Option<usize>,
    pub prompt_len: Option<usize>,
    pub target_len: Option<usize>,
    pub top_k: Option<usize>,
    pub detail_temperature: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub mask_probs: Option<Vec<f64>>,
    pub temperatures: Option<Vec<f64>>,
    pub m: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Format(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flag > file > default, for a copyable value.
pub fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag > file > default, cloning out of the file config.
pub fn pick_clone<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}
