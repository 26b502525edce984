//! Masked-LM training loop with Adam, warmup plus cosine decay, and global
//! norm clipping.
//!
//! Per-sequence gradients are computed independently (in parallel when the
//! `parallel` feature is on) and summed in batch order, so results do not
//! depend on the thread count.

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::save_checkpoint;
use super::network::{loss_and_grad, Network, Target};
use super::nn::{Adam, AdamConfig};
use super::toy::ToyModel;
use crate::scoring::ScoreError;
use crate::seqcore::rng::{derive_seed, task_rng};
use crate::seqcore::Sequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak.
    pub final_lr_fraction: f64,
    pub grad_clip: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Where to keep the last finite-loss model, if anywhere.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_checkpoint_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            steps: 1000,
            batch_size: 16,
            learning_rate: 3e-3,
            warmup_steps: 50,
            final_lr_fraction: 0.1,
            grad_clip: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint: None,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate must lie strictly between 0 and 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad("final_lr_fraction must lie in [0, 1]");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.final_lr_fraction;
        self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("loss diverged at step {step}; returning the model from step {last_good_step}")]
    Diverged {
        step: usize,
        last_good_step: usize,
        last_good: Box<ToyModel>,
        trace: LossTrace,
    },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Means over consecutive non-overlapping windows.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.losses()
            .chunks(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// One training example: input tokens and masked-position targets.
pub struct MaskedExample {
    pub tokens: Vec<usize>,
    pub targets: Vec<Target>,
}

/// Hides each position with probability `rate`, at least one per
/// sequence, and crops to `cap` with a random window when needed.
pub fn mask_example<R: Rng>(x: &Sequence, rate: f64, mask: usize, cap: Option<usize>, rng: &mut R) -> MaskedExample {
    let width = x.alphabet().len();
    let mut symbols: &[u8] = x.symbols();
    if let Some(cap) = cap {
        if symbols.len() > cap {
            let start = rng.random_range(0..=symbols.len() - cap);
            symbols = &symbols[start..start + cap];
        }
    }
    let mut tokens: Vec<usize> = symbols.iter().map(|&s| s as usize).collect();
    let mut hidden: Vec<usize> = (0..tokens.len()).filter(|_| rng.random::<f64>() < rate).collect();
    if hidden.is_empty() {
        hidden.push(rng.random_range(0..tokens.len()));
    }
    let targets = hidden
        .iter()
        .map(|&i| Target::hard(i, tokens[i], width))
        .collect();
    for &i in &hidden {
        tokens[i] = mask;
    }
    MaskedExample { tokens, targets }
}

fn batch_gradient(model: &ToyModel, batch: &[MaskedExample]) -> Result<(f64, Vec<f64>), ScoreError> {
    let n = model.layout().total();
    let per_example = |ex: &MaskedExample| -> Result<(f64, Vec<f64>), ScoreError> {
        let mut g = vec![0.0; n];
        let loss = loss_and_grad(model, &ex.tokens, &ex.targets, &mut g)?;
        Ok((loss, g))
    };
    let parts = crate::scoring::par_map(batch, per_example)?;
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub trace: LossTrace,
}

/// Trains `model` in place on masked-LM cross-entropy over `corpus`.
pub fn train_masked_lm(
    mut model: ToyModel,
    corpus: &[Sequence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut opt = Adam::new(model.layout().total(), cfg.adam);
    let mut trace = LossTrace::default();
    let mut last_good = (model.clone(), 0usize);
    let stream = derive_seed(cfg.seed, "train-batches");
    let cap = model.context_cap();
    let mask = model.mask_token();

    for step in 0..cfg.steps {
        let mut rng = task_rng(stream, step as u64);
        let batch: Vec<MaskedExample> = (0..cfg.batch_size)
            .map(|_| {
                let x = &corpus[rng.random_range(0..corpus.len())];
                mask_example(x, cfg.mask_rate, mask, cap, &mut rng)
            })
            .collect();
        let (loss, mut grad) = batch_gradient(&model, &batch)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(TrainError::Diverged {
                step,
                last_good_step: last_good.1,
                last_good: Box::new(last_good.0),
                trace,
            });
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let lr = cfg.lr_at(step);
        let row = TraceRow { step, loss, lr, grad_norm: norm };
        on_step(&row);
        trace.rows.push(row);
        opt.step(model.params_mut(), &grad, lr);

        if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
            last_good = (model.clone(), step + 1);
            if let Some(path) = &cfg.checkpoint {
                save_checkpoint(path, &model, &serde_json::json!({ "step": step + 1 }))?;
            }
        }
    }
    Ok(TrainOutcome { model, trace })
}
