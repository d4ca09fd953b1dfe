//! Optimization: Adam with linear warmup into cosine decay, per-epoch
//! loss curves, and patience-based early stopping that returns the
//! best-validation checkpoint.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{batch_loss, batch_loss_and_grad, Task};
use super::{ModelParams, Objective};
use crate::dataset::{mask_sentence, shuffled_batches, MaskedSentence, Sentence};
use crate::error::{Error, Result};
use crate::util::component_rng;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a validation
    /// improvement.
    pub patience: usize,
    /// Base learning rate after warmup.
    pub lr: f64,
    pub warmup_steps: usize,
    /// The cosine decays to `lr * min_lr_frac` at the final step.
    pub min_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Masking probability per epoch (masked objective only).
    pub mask_prob: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            batch_size: 16,
            max_epochs: 20,
            patience: 6,
            lr: 3e-4,
            warmup_steps: 100,
            min_lr_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_prob: 0.15,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Model(
                "batch size, epoch budget, and patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Model("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Model("mask probability out of range".into()));
        }
        Ok(())
    }
}

/// Plain Adam over a flat parameter vector, with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Learning rate at a 0-based step: linear warmup to `lr`, then cosine
/// decay to `lr * min_lr_frac` at `total_steps`.
pub(crate) fn lr_at(step: usize, total_steps: usize, tc: &TrainConfig) -> f64 {
    if step < tc.warmup_steps {
        return tc.lr * (step + 1) as f64 / tc.warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(tc.warmup_steps).max(1);
    let progress = ((step - tc.warmup_steps) as f64 / span as f64).min(1.0);
    let min_lr = tc.lr * tc.min_lr_frac;
    min_lr + 0.5 * (tc.lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; `Stop` fires on the `patience`-th
/// consecutive epoch without improvement, so a model that stops
/// improving at epoch k halts at epoch k + patience.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.since = 0;
            StopDecision::Improved
        } else {
            self.since += 1;
            if self.since >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Attach where in the run a step-level failure happened; numerical
/// blow-ups otherwise surface as bare forward-pass errors.
fn step_context(e: Error, epoch: usize, step: usize) -> Error {
    Error::Model(format!(
        "training aborted at epoch {epoch}, step {step}: {e}"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub params: ModelParams,
    pub curves: Vec<EpochRecord>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: usize,
}

/// Train a freshly initialized (or warm) model. Sentences are visited
/// once per epoch in a seeded shuffled order; for the masked objective
/// each epoch draws fresh masks while validation masks are fixed up
/// front so the early-stopping signal is comparable across epochs.
pub fn train(
    init: ModelParams,
    train_data: &[Sentence],
    val_data: &[Sentence],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Model(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut params = init;
    let objective = params.config.objective;
    let dict = params.config.dict_size;
    let mask_id = params.config.mask_token() as u16;

    let mut shuffle_rng = component_rng(tc.seed, "lm/train/shuffle");
    let mut mask_rng = component_rng(tc.seed, "lm/train/masks");
    let mut val_mask_rng = component_rng(tc.seed, "lm/train/val-masks");

    // Fixed validation masks (masked objective only).
    let val_masked: Vec<MaskedSentence> = if objective == Objective::Mlm {
        val_data
            .iter()
            .map(|s| mask_sentence(s, tc.mask_prob, dict, mask_id, &mut val_mask_rng))
            .filter(|ms| !ms.positions.is_empty())
            .collect()
    } else {
        Vec::new()
    };
    if objective == Objective::Mlm && val_masked.is_empty() {
        return Err(Error::Model(
            "validation masking produced no masked positions; raise p_m or use longer sentences"
                .into(),
        ));
    }

    let batches_per_epoch = train_data.len().div_ceil(tc.batch_size);
    let total_steps = batches_per_epoch * tc.max_epochs;
    let mut adam = Adam::new(params.data.len(), tc.beta1, tc.beta2, tc.eps);
    let mut stopper = EarlyStopper::new(tc.patience);
    let mut curves = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut stopped_early = false;
    let mut step = 0usize;

    for epoch in 1..=tc.max_epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for idxs in shuffled_batches(train_data.len(), tc.batch_size, &mut shuffle_rng) {
            let (loss, grads) = match objective {
                Objective::Nwp => {
                    let batch: Vec<Sentence> =
                        idxs.iter().map(|&i| train_data[i].clone()).collect();
                    batch_loss_and_grad(&params, Task::Nwp(&batch))
                        .map_err(|e| step_context(e, epoch, step))?
                }
                Objective::Mlm => {
                    let batch: Vec<MaskedSentence> = idxs
                        .iter()
                        .map(|&i| {
                            mask_sentence(&train_data[i], tc.mask_prob, dict, mask_id, &mut mask_rng)
                        })
                        .filter(|ms| !ms.positions.is_empty())
                        .collect();
                    if batch.is_empty() {
                        return Err(Error::Model(
                            "masking produced an empty batch; raise p_m or use longer sentences"
                                .into(),
                        ));
                    }
                    batch_loss_and_grad(&params, Task::Mlm(&batch))
                        .map_err(|e| step_context(e, epoch, step))?
                }
            };
            // Abort before the update so the caller keeps usable
            // parameters alongside the error.
            if !loss.is_finite() {
                return Err(Error::Model(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {step} \
                     (lr {:.3e}); rerun with a lower learning rate",
                    lr_at(step, total_steps, tc)
                )));
            }
            adam.step(&mut params.data, &grads, lr_at(step, total_steps, tc));
            epoch_loss += loss * idxs.len() as f64;
            seen += idxs.len();
            step += 1;
        }
        let train_loss = epoch_loss / seen as f64;

        let val_loss = match objective {
            Objective::Nwp => batch_loss(&params, Task::Nwp(val_data))?,
            Objective::Mlm => batch_loss(&params, Task::Mlm(&val_masked))?,
        };
        if !val_loss.is_finite() {
            return Err(Error::Model(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        curves.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.update(val_loss) {
            StopDecision::Improved => {
                best_params = params.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        curves,
        best_val_loss: stopper.best(),
        best_epoch,
        stopped_early,
        steps: step,
    })
}

/// Write per-epoch curves as CSV; the last column rescales the
/// validation loss by ln D so runs with different dictionaries are
/// comparable (1.0 is the uniform-guessing level).
pub fn write_loss_curves(path: &Path, curves: &[EpochRecord], dict_size: usize) -> Result<()> {
    let ln_d = (dict_size as f64).ln();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss,val_loss_rescaled")?;
    for rec in curves {
        writeln!(
            w,
            "{},{:.12},{:.12},{:.12}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_loss / ln_d
        )?;
    }
    w.flush()?;
    Ok(())
}
