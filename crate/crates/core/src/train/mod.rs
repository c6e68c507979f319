//! Supervised training: split, schedule, optimizer, clipping and early stopping.

mod optim;
mod schedule;
mod split;

pub use optim::{adamw_step, clip_gradients, clip_store_gradients, AdamW, Moments, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::lr_at_epoch;
pub use split::{stratified_split, stratified_split_by, validation_count, SplitIndices};

use std::fmt::Write as _;

use crate::data::{require_labels, LabeledRecord};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{Batch, ShedModel};
use crate::nn::{Mode, RngStream};

/// RNG sub-stream used for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub class_weights: [f64; 2],
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 2e-4,
            class_weights: [1.3, 0.7],
            warmup_epochs: 5,
            max_epochs: 100,
            patience: 10,
            clip_norm: 1.0,
            batch_size: 32,
            val_fraction: 0.2,
            seed: 7,
        }
    }
}

impl TrainConfig {
    /// Defaults for the single-layer linear probe, which tolerates a larger step.
    pub fn probe_defaults() -> Self {
        Self {
            lr: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation(format!("train config: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return fail("class_weights must be non-negative and not all zero");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must be in (0, 1)");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.warmup_epochs >= self.max_epochs {
            return fail("warmup_epochs must be below max_epochs");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// CSV with columns `epoch,lr,train_loss,val_macro_f1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.lr, e.train_loss, e.val_macro_f1);
        }
        out
    }
}

/// Tracks the best score; ties keep the earlier epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    /// Records a score; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => false,
            _ => {
                self.best = Some((epoch, score));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// True once `patience` epochs have passed without improvement.
    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _)| epoch >= b + self.patience)
    }
}

/// Shuffled batches of `batch_size`; a trailing single-row batch is merged into the
/// previous one because train-mode batch normalization needs two rows.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Trains on `records` with an internal stratified validation split and returns
/// the weights of the best validation epoch.
pub fn train(model: ShedModel, records: &[LabeledRecord], config: &TrainConfig) -> Result<(ShedModel, TrainReport)> {
    config.validate()?;
    let split = stratified_split(records, config.val_fraction, config.seed)?;
    let train_set: Vec<&LabeledRecord> = split.train.iter().map(|&i| &records[i]).collect();
    let val_set: Vec<LabeledRecord> = split.validation.iter().map(|&i| records[i].clone()).collect();
    train_on_split(model, &train_set, &val_set, config)
}

/// Training loop over an explicit train/validation partition.
pub fn train_on_split(
    mut model: ShedModel,
    train_set: &[&LabeledRecord],
    val_set: &[LabeledRecord],
    config: &TrainConfig,
) -> Result<(ShedModel, TrainReport)> {
    config.validate()?;
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(Error::validation(format!(
            "empty split: {} training and {} validation records",
            train_set.len(),
            val_set.len()
        )));
    }
    let owned: Vec<LabeledRecord> = train_set.iter().map(|r| (*r).clone()).collect();
    let labels = require_labels(&owned)?;
    require_labels(val_set)?;

    let mut shuffle_rng = RngStream::new(config.seed).derive(SHUFFLE_STREAM);
    let mut optimizer = AdamW::new(model.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_model: Option<ShedModel> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.max_epochs {
        let lr = lr_at_epoch(epoch, config)?;
        shuffle_rng.shuffle(&mut order);
        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for (b, idx) in make_batches(&order, config.batch_size).iter().enumerate() {
            let seqs: Vec<&[f64]> = idx.iter().map(|&i| train_set[i].entropies.as_slice()).collect();
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let batch = Batch::from_sequences(&seqs)?;
            let loss = model.loss_and_grad(&batch, &batch_labels, &config.class_weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            clip_store_gradients(model.params_mut(), config.clip_norm);
            optimizer.step(model.params_mut(), lr, config.weight_decay)?;
            loss_sum += loss * idx.len() as f64;
        }
        model.set_mode(Mode::Eval);
        let val_macro_f1 = evaluate(&model, val_set)?.macro_f1;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_macro_f1,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train_loss {:.5} val_macro_f1 {val_macro_f1:.4}",
            stats.train_loss
        );
        epochs.push(stats);
        if stopper.observe(epoch, val_macro_f1) {
            best_model = Some(model.clone());
        }
        if stopper.should_stop(epoch) {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_f1) = stopper.best().expect("at least one epoch ran");
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_f1,
        stopped_early,
    };
    Ok((best_model.expect("best model recorded"), report))
}
