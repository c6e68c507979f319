//! Binary classification metrics and attention-profile aggregation.

use std::fmt::Write as _;

use crate::data::LabeledRecord;
use crate::error::{Error, Result};
use crate::model::ShedModel;

/// Counts of (true class, predicted class) pairs over classes {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dims("confusion matrix", &[truth.len()], &[predicted.len()]));
        }
        let mut cm = Self::new();
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth > 1 || predicted > 1 {
            return Err(Error::validation(format!(
                "class pair ({truth}, {predicted}) outside {{0, 1}}"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts[0][1] == 0 && self.counts[1][0] == 0
    }

    /// Exchanges the roles of the two classes.
    pub fn swapped(&self) -> Self {
        Self {
            counts: [
                [self.counts[1][1], self.counts[1][0]],
                [self.counts[0][1], self.counts[0][0]],
            ],
        }
    }

    /// Precision, recall and F1 of `class`; every 0/0 ratio is taken as 0.
    pub fn class_metrics(&self, class: usize) -> ClassMetrics {
        let other = 1 - class;
        let tp = self.counts[class][class] as f64;
        let fp = self.counts[other][class] as f64;
        let fn_ = self.counts[class][other] as f64;
        let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassMetrics {
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
            support: (tp + fn_) as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Unweighted mean of the two per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::validation("macro-F1 of an empty confusion matrix"));
    }
    Ok((cm.class_metrics(0).f1 + cm.class_metrics(1).f1) / 2.0)
}

/// Macro-F1 straight from label vectors.
pub fn macro_f1_from_labels(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    macro_f1(&ConfusionMatrix::from_predictions(truth, predicted)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            macro_f1: macro_f1(&confusion)?,
            class0: confusion.class_metrics(0),
            class1: confusion.class_metrics(1),
            confusion,
        })
    }
}

/// Anything that assigns a binary class to entropy sequences.
pub trait Classifier {
    fn classify(&self, seqs: &[&[f64]]) -> Result<Vec<usize>>;
}

/// Sequences per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

impl Classifier for ShedModel {
    fn classify(&self, seqs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_all(seqs, EVAL_CHUNK)?
            .into_iter()
            .map(|p| p.predicted_class)
            .collect())
    }
}

/// Flags a sequence as hallucinated when its score exceeds `threshold`.
pub struct ThresholdClassifier<F> {
    pub score: F,
    pub threshold: f64,
}

impl<F: Fn(&[f64]) -> f64> Classifier for ThresholdClassifier<F> {
    fn classify(&self, seqs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(seqs
            .iter()
            .map(|s| usize::from((self.score)(s) > self.threshold))
            .collect())
    }
}

/// Confusion matrix, per-class metrics and macro-F1 of `classifier` on labeled records.
pub fn evaluate<C: Classifier + ?Sized>(classifier: &C, records: &[LabeledRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::validation("no records to evaluate"));
    }
    let truth = records
        .iter()
        .map(|r| {
            r.label
                .map(usize::from)
                .ok_or_else(|| Error::validation(format!("record `{}` is unlabeled", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<&[f64]> = records.iter().map(|r| r.entropies.as_slice()).collect();
    let predicted = classifier.classify(&seqs)?;
    EvalReport::from_confusion(ConfusionMatrix::from_predictions(&truth, &predicted)?)
}

pub const METRICS_CSV_HEADER: &str =
    "method,dataset,macro_f1,f1_class0,f1_class1,precision_class0,recall_class0,precision_class1,recall_class1";

/// One CSV row matching [`METRICS_CSV_HEADER`].
pub fn metrics_csv_row(method: &str, dataset: &str, report: &EvalReport) -> String {
    format!(
        "{method},{dataset},{},{},{},{},{},{},{}",
        report.macro_f1,
        report.class0.f1,
        report.class1.f1,
        report.class0.precision,
        report.class0.recall,
        report.class1.precision,
        report.class1.recall
    )
}

/// Mean attention weight at one sequence position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionProfile {
    pub position: usize,
    pub mean_weight: f64,
    /// Number of sequences long enough to reach this position.
    pub count: usize,
}

/// Per-position mean of attention weights over every sequence that reaches the position.
pub fn profile_from_weights(weights: &[Vec<f64>]) -> Result<Vec<AttentionProfile>> {
    let max_len = weights.iter().map(Vec::len).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::validation("attention profile needs at least one sequence"));
    }
    let mut sums = vec![0.0; max_len];
    let mut counts = vec![0usize; max_len];
    for w in weights {
        for (t, &a) in w.iter().enumerate() {
            sums[t] += a;
            counts[t] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(position, (s, count))| AttentionProfile {
            position,
            mean_weight: s / count as f64,
            count,
        })
        .collect())
}

/// Attention profile of a model over the records' entropy sequences.
pub fn attention_profile(model: &ShedModel, records: &[LabeledRecord]) -> Result<Vec<AttentionProfile>> {
    if records.is_empty() {
        return Err(Error::validation("attention profile needs at least one record"));
    }
    let seqs: Vec<&[f64]> = records.iter().map(|r| r.entropies.as_slice()).collect();
    let weights: Vec<Vec<f64>> = model
        .predict_all(&seqs, EVAL_CHUNK)?
        .into_iter()
        .map(|p| p.attention)
        .collect();
    profile_from_weights(&weights)
}

/// Fraction of total profile mass on positions `0..k`.
pub fn early_mass_share(profile: &[AttentionProfile], k: usize) -> f64 {
    let total: f64 = profile.iter().map(|p| p.mean_weight).sum();
    let early: f64 = profile.iter().filter(|p| p.position < k).map(|p| p.mean_weight).sum();
    early / total
}

pub fn attention_profile_csv(profile: &[AttentionProfile]) -> String {
    let mut out = String::from("position,mean_weight,count\n");
    for p in profile {
        let _ = writeln!(out, "{},{},{}", p.position, p.mean_weight, p.count);
    }
    out
}
