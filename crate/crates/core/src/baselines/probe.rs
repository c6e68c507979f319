use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::metrics::macro_f1_from_labels;
use crate::nn::{weighted_cross_entropy, Matrix, RngStream};
use crate::train::{
    adamw_step, clip_gradients, lr_at_epoch, make_batches, stratified_split_by, EarlyStopping, EpochStats, Moments,
    TrainConfig, TrainReport,
};

/// Number of leading positions averaged by [`summary_features`].
pub const EARLY_WINDOW: usize = 8;

/// `[mean, max, mean of the first 8 values]` of an entropy sequence.
pub fn summary_features(entropies: &[f64]) -> Result<Vec<f64>> {
    if entropies.is_empty() {
        return Err(Error::validation("summary features of an empty sequence"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        mean(entropies),
        max,
        mean(&entropies[..entropies.len().min(EARLY_WINDOW)]),
    ])
}

/// Standardized affine classifier over fixed-width features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[dim x 2]`, row-major.
    pub weight: Vec<f64>,
    pub bias: [f64; 2],
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn raw_logits(&self, z: &[f64]) -> [f64; 2] {
        let mut out = self.bias;
        for (i, v) in z.iter().enumerate() {
            out[0] += v * self.weight[2 * i];
            out[1] += v * self.weight[2 * i + 1];
        }
        out
    }

    pub fn logits(&self, features: &[f64]) -> Result<[f64; 2]> {
        if features.len() != self.dim() {
            return Err(Error::dims("probe features", &[self.dim()], &[features.len()]));
        }
        Ok(self.raw_logits(&self.standardize(features)))
    }

    /// Class 1 only when its logit is strictly larger.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let l = self.logits(features)?;
        Ok(usize::from(l[1] > l[0]))
    }
}

fn check_features(records: &[FeatureRecord]) -> Result<usize> {
    let dim = records
        .first()
        .ok_or_else(|| Error::validation("no feature records"))?
        .features
        .len();
    if dim == 0 {
        return Err(Error::validation("zero-dimensional features"));
    }
    for r in records {
        if r.features.len() != dim {
            return Err(Error::validation(format!(
                "record `{}` has {} features, expected {dim}",
                r.id,
                r.features.len()
            )));
        }
        if r.label > 1 || r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("record `{}` has an invalid label or feature", r.id)));
        }
    }
    Ok(dim)
}

/// Macro-F1 of the probe on labeled feature records.
pub fn probe_macro_f1(probe: &LinearProbe, records: &[FeatureRecord]) -> Result<f64> {
    let truth: Vec<usize> = records.iter().map(|r| usize::from(r.label)).collect();
    let pred = records
        .iter()
        .map(|r| probe.predict(&r.features))
        .collect::<Result<Vec<_>>>()?;
    macro_f1_from_labels(&truth, &pred)
}

/// Fits an affine probe with the same split, loss, optimizer, schedule, clipping and
/// early stopping as the sequence model. Features are z-scored with training-set statistics.
pub fn train_linear_probe(records: &[FeatureRecord], config: &TrainConfig) -> Result<(LinearProbe, TrainReport)> {
    config.validate()?;
    let dim = check_features(records)?;
    let labels: Vec<usize> = records.iter().map(|r| usize::from(r.label)).collect();
    let split = stratified_split_by(&labels, &vec![None; records.len()], config.val_fraction, config.seed)?;

    let n_train = split.train.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in &split.train {
        mean.iter_mut().zip(&records[i].features).for_each(|(m, v)| *m += v / n_train);
    }
    let mut scale = vec![0.0; dim];
    for &i in &split.train {
        for ((s, v), m) in scale.iter_mut().zip(&records[i].features).zip(&mean) {
            *s += (v - m) * (v - m) / n_train;
        }
    }
    scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

    let mut rng = RngStream::new(config.seed);
    let bound = (1.0 / dim as f64).sqrt();
    let mut probe = LinearProbe {
        weight: (0..2 * dim).map(|_| rng.uniform_range(-bound, bound)).collect(),
        bias: [rng.uniform_range(-bound, bound), rng.uniform_range(-bound, bound)],
        mean,
        scale,
    };
    let z: Vec<Vec<f64>> = records.iter().map(|r| probe.standardize(&r.features)).collect();
    let val: Vec<FeatureRecord> = split.validation.iter().map(|&i| records[i].clone()).collect();

    let mut shuffle_rng = rng.derive(1);
    let mut w_moments = Moments::zeros(2 * dim);
    let mut b_moments = Moments::zeros(2);
    let mut step = 0u64;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = probe.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order = split.train.clone();

    for epoch in 0..config.max_epochs {
        let lr = lr_at_epoch(epoch, config)?;
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, idx) in make_batches(&order, config.batch_size).iter().enumerate() {
            let rows = idx.len();
            let mut logits = Vec::with_capacity(rows * 2);
            for &i in idx {
                logits.extend(probe.raw_logits(&z[i]));
            }
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, dlogits) =
                weighted_cross_entropy(&Matrix::new(rows, 2, logits)?, &batch_labels, &config.class_weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            let mut gw = vec![0.0; 2 * dim];
            let mut gb = vec![0.0; 2];
            for (r, &i) in idx.iter().enumerate() {
                let d = dlogits.row(r);
                for (k, v) in z[i].iter().enumerate() {
                    gw[2 * k] += v * d[0];
                    gw[2 * k + 1] += v * d[1];
                }
                gb[0] += d[0];
                gb[1] += d[1];
            }
            clip_gradients(&mut [&mut gw[..], &mut gb[..]], config.clip_norm);
            step += 1;
            adamw_step(&mut probe.weight, &gw, &mut w_moments, step, lr, config.weight_decay)?;
            let mut bias = probe.bias.to_vec();
            adamw_step(&mut bias, &gb, &mut b_moments, step, lr, config.weight_decay)?;
            probe.bias = [bias[0], bias[1]];
            loss_sum += loss * rows as f64;
        }
        let val_macro_f1 = probe_macro_f1(&probe, &val)?;
        epochs.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / n_train,
            val_macro_f1,
        });
        if stopper.observe(epoch, val_macro_f1) {
            best = probe.clone();
        }
        if stopper.should_stop(epoch) {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_f1) = stopper.best().expect("at least one epoch ran");
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            best_val_f1,
            stopped_early,
        },
    ))
}
