use instruct_nmt_core::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::ModelParams;
use crate::transformer::{forward_loss, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak rate, reached after `warmup_steps` linear warmup steps.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Reshuffle each epoch's examples with the seed before batching.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 200,
            clip_norm: 1.0,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm >= 0.0) {
            return bad("adam_eps must be positive and clip_norm non-negative");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl Adam {
    fn new(p: &ModelParams) -> Self {
        let z: Vec<Vec<f64>> = p.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: z.clone(), v: z, step: 0 }
    }

    fn update(&mut self, p: &mut ModelParams, g: &ModelParams, cfg: &TrainConfig, scale: f64) {
        self.step += 1;
        let lr = cfg.lr_at(self.step);
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (i, (t, gt)) in p.tensors_mut().iter_mut().zip(g.tensors()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..t.data.len() {
                let gj = gt.data[j] * scale;
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                t.data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

pub fn grad_norm(g: &ModelParams) -> f64 {
    g.tensors().iter().flat_map(|t| &t.data).map(|x| x * x).sum::<f64>().sqrt()
}

/// Train with Adam from fresh optimizer state. `data(epoch)` yields that
/// epoch's examples; results are a pure function of params, data and cfg.
pub fn train(
    mut params: ModelParams,
    data: &mut dyn FnMut(usize) -> Vec<Example>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    cfg.validate()?;
    let mut opt = Adam::new(&params);
    let mut trace = TrainTrace {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        let mut examples = data(epoch);
        if examples.is_empty() {
            return Err(ModelError::Input(format!("epoch {epoch} has no training examples")));
        }
        if cfg.shuffle {
            examples.shuffle(&mut seed::stream(cfg.seed, "train:shuffle", epoch as u64));
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in examples.chunks(cfg.batch_size) {
            let (loss, grads) = forward_loss(&params, batch)?;
            let norm = grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(ModelError::Divergence {
                    step: opt.step + 1,
                    loss,
                });
            }
            let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                cfg.clip_norm / norm
            } else {
                1.0
            };
            opt.update(&mut params, &grads, cfg, scale);
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("epoch {}/{}: loss {mean:.4} ({} steps)", epoch + 1, cfg.epochs, opt.step);
        trace.epoch_loss.push(mean);
    }
    trace.steps = opt.step;
    Ok((params, trace))
}
