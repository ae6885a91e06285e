//! Seeded mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{backward, LossConfig, TrainingExample};
use super::params::{GradientSet, ModelParams, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pair feature width.
    pub d: usize,
    pub learning_rate: f64,
    /// Last epoch (1-based) run at `learning_rate`; later epochs use
    /// `decayed_rate`. `None` disables decay.
    pub decay_epoch: Option<usize>,
    pub decayed_rate: f64,
    pub epochs: usize,
    /// Images per optimizer step.
    pub batch_size: usize,
    /// Weight of the preposition loss.
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            learning_rate: 1e-4,
            decay_epoch: Some(6),
            decayed_rate: 1e-5,
            epochs: 8,
            batch_size: 16,
            lambda: 0.1,
            gamma: 2.0,
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 {
            return bad("d must be positive");
        }
        if !(self.learning_rate > 0.0 && self.decayed_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.gamma >= 0.0) || !(0.0..=1.0).contains(&self.alpha) {
            return bad("focal gamma must be >= 0 and alpha in [0, 1]");
        }
        Ok(())
    }

    /// Step size for a 1-based epoch.
    pub fn rate(&self, epoch: usize) -> f64 {
        match self.decay_epoch {
            Some(e) if epoch > e => self.decayed_rate,
            _ => self.learning_rate,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }
}

/// Plain gradient descent `w <- w - rate(epoch) * g`.
pub fn optimizer_step(params: &mut ModelParams, grads: &GradientSet, cfg: &TrainConfig, epoch: usize) {
    params.axpy(-cfg.rate(epoch), grads);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub rate: f64,
    pub hoi_loss: f64,
    pub prep_loss: f64,
    pub total_loss: f64,
    pub images: usize,
    pub skipped: usize,
}

/// One shuffled pass. Epochs are 1-based; the shuffle for epoch `e` depends
/// only on `(cfg.seed, e)`.
pub fn train_epoch(
    examples: &[TrainingExample],
    params: &mut ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].input.rows() > 0)
        .collect();
    let skipped = examples.len() - order.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);

    let loss_cfg = cfg.loss();
    let (mut hoi, mut prep, mut total, mut n, mut n_prep) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for chunk in order.chunks(cfg.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| examples[i].clone()));
        let (stats, grad) = backward(&batch, params, &loss_cfg)?;
        optimizer_step(params, &grad, cfg, epoch);
        hoi += stats.hoi;
        prep += stats.prep;
        total += stats.total;
        n += stats.images;
        n_prep += stats.prep_images;
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(EpochStats {
        epoch,
        rate: cfg.rate(epoch),
        hoi_loss: mean(hoi, n),
        prep_loss: mean(prep, n_prep),
        total_loss: mean(total, n),
        images: n,
        skipped,
    })
}

/// Initializes from `cfg.seed` and runs `cfg.epochs` epochs, reporting each.
pub fn train(
    examples: &[TrainingExample],
    shape: Shape,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(shape, &mut rng);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(examples, &mut params, cfg, epoch)?;
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((params, history))
}
