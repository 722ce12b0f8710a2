//! Optimization: Adam with global-norm clipping, a plateau schedule on
//! validation AR, deterministic per-sample batching, and checkpoints.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use schedule::PlateauScheduler;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::pipeline::{evaluate_examples, Example};
use crate::tensor::{Mode, Value};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_decay_factor: 0.01,
            plateau_patience: 3,
            batch_size: 8,
            epochs: 10,
            seed: 7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must be in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return bad("Adam betas must be in [0, 1) and eps positive");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ar: f64,
    pub val_cr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn best_val_ar(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_ar).reduce(f64::max)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: u64,
        reason: String,
        /// Model and history as of the last successful step.
        last_good: Box<Model>,
        history: History,
    },
    #[error(transparent)]
    Failed(#[from] Error),
}

/// Mixes a base seed with step and sample coordinates into a dropout seed.
fn derive_seed(seed: u64, step: u64, index: u64) -> u64 {
    let mut z =
        seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Owns the model and optimizer state across steps.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    adam: AdamState,
    scheduler: PlateauScheduler,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let scheduler = PlateauScheduler::new(cfg.lr, cfg.lr_decay_factor, cfg.plateau_patience);
        Ok(Self {
            model,
            cfg,
            adam: AdamState::new(),
            scheduler,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_parts(self) -> (Model, AdamState) {
        (self.model, self.adam)
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr()
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    /// One optimizer step on `batch`: a joint forward, mean per-sample loss,
    /// clipped gradients, Adam, then the batch-norm running statistics.
    /// Returns the mean train-mode loss.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let step = self.adam.step;
        let scale = 1.0 / batch.len() as f64;
        let mut pass = self
            .model
            .pass(Mode::Train, derive_seed(self.cfg.seed, step, 0));
        let features: Vec<_> = batch.iter().map(|ex| &ex.features).collect();
        let outputs = pass.forward_batch(&features)?;
        let mut total: Option<Value> = None;
        for (ex, out) in batch.iter().zip(&outputs) {
            let loss = pass.loss(&out.logits, &ex.target)?;
            if !loss.item().is_finite() {
                return Err(crate::tensor::TensorError::NumericFailure(format!(
                    "non-finite loss on sample `{}`",
                    ex.label
                ))
                .into());
            }
            total = Some(match total {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let mean = total.expect("nonempty batch").scale(scale)?;
        mean.backward()?;
        let mut grads = pass.gradients();
        let updates = pass.into_bn_updates();
        grads.clip_global_norm(self.cfg.clip_norm);
        let adam = self.cfg.adam(self.scheduler.lr());
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &adam)?;
        self.model.apply_bn_updates(&updates);
        Ok(mean.item())
    }

    /// One shuffled pass over `train`; returns the mean batch loss.
    pub fn epoch(&mut self, train: &[Example], epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            sum += self.step(&batch)?;
            batches += 1;
        }
        Ok(sum / batches as f64)
    }

    /// Feeds a validation AR to the plateau schedule.
    pub fn observe(&mut self, val_ar: f64) -> bool {
        self.scheduler.observe(val_ar)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub adam: AdamState,
}

/// Trains for `cfg.epochs` epochs, evaluating on `val` after each.
pub fn train(
    model: Model,
    train_set: &[Example],
    val_set: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(
            Error::EmptyInput("training and validation sets must be nonempty".into()).into(),
        );
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        let lr = trainer.lr();
        let loss = match trainer.epoch(train_set, epoch) {
            Ok(loss) if loss.is_finite() => loss,
            Ok(_) => return Err(diverged(epoch, &trainer, history, "non-finite loss".into())),
            Err(e) if e.is_numeric() => {
                return Err(diverged(epoch, &trainer, history, e.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let report = evaluate_examples(&trainer.model, vocab, val_set, false)?;
        log::info!(
            "epoch {epoch}: loss {loss:.4}, val AR {:.4}, lr {lr:e}",
            report.ar
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_ar: report.ar,
            val_cr: report.cr,
            lr,
        });
        trainer.observe(report.ar);
    }
    let (model, adam) = trainer.into_parts();
    Ok(TrainOutcome {
        model,
        history,
        adam,
    })
}

/// The failing step never touches the model, so the trainer's model is the
/// last good one.
fn diverged(epoch: usize, trainer: &Trainer, history: History, reason: String) -> TrainError {
    TrainError::Diverged {
        epoch,
        step: trainer.steps(),
        reason,
        last_good: Box::new(trainer.model.clone()),
        history,
    }
}
