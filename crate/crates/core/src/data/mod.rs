//! Record formats, JSONL ingestion and synthetic data.

mod config;
mod synth;

pub use config::Settings;
pub use synth::{generate_synthetic, Regime, SynthConfig};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::entropy::{build_entropy_sequence, max_entropy, TokenDistribution, MAX_CANDIDATES};
use crate::error::{Error, Result};

/// Tolerance on the upper entropy bound at ingest.
pub const ENTROPY_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unspecified,
}

/// One response: its entropy sequence and hallucination label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledRecord {
    pub id: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub entropies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default)]
    pub split: Split,
}

/// Top-k next-token probabilities for each generated token of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitDumpRecord {
    pub id: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub top_probs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default)]
    pub split: Split,
}

/// A fixed-width feature vector with a binary label, input to the linear probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub id: String,
    pub label: u8,
    pub features: Vec<f64>,
}

/// Scalar uncertainty score per response, as produced by the semantic-entropy baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    /// Binarized score, present when a threshold was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<u8>,
}

/// Per-record check run after deserialization.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), String>;
}

fn check_label(label: Option<u8>) -> std::result::Result<(), String> {
    match label {
        Some(l) if l > 1 => Err(format!("label {l} outside the label domain {{0, 1}}")),
        _ => Ok(()),
    }
}

impl Validate for LabeledRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.entropies.is_empty() {
            return Err(format!("record `{}` has no entropies", self.id));
        }
        let bound = max_entropy();
        for (i, &v) in self.entropies.iter().enumerate() {
            if !v.is_finite() || v < 0.0 || v > bound + ENTROPY_BOUND_SLACK {
                return Err(format!(
                    "entropy value {v} at position {i} outside [0, ln(100) = {bound:.6}]"
                ));
            }
        }
        check_label(self.label)
    }
}

impl Validate for LogitDumpRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.top_probs.is_empty() {
            return Err(format!("record `{}` has no tokens", self.id));
        }
        for (t, probs) in self.top_probs.iter().enumerate() {
            if probs.len() > MAX_CANDIDATES {
                return Err(format!("token {t}: {} candidates exceed {MAX_CANDIDATES}", probs.len()));
            }
            if probs.windows(2).any(|w| w[1] > w[0]) {
                return Err(format!("token {t}: probabilities are not in descending order"));
            }
            TokenDistribution::new(probs.clone()).map_err(|e| format!("token {t}: {e}"))?;
        }
        check_label(self.label)
    }
}

impl Validate for FeatureRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.features.is_empty() {
            return Err(format!("record `{}` has zero-dimensional features", self.id));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(format!("feature {i} is not finite"));
        }
        check_label(Some(self.label))
    }
}

impl Validate for ScoreRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if !self.score.is_finite() {
            return Err(format!("record `{}` has a non-finite score", self.id));
        }
        check_label(self.label)?;
        check_label(self.predicted)
    }
}

/// Parses JSONL text. Blank lines are skipped; any bad line fails the whole input.
pub fn parse_jsonl<T: DeserializeOwned + Validate>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: T = serde_json::from_str(line).map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::Record { line: line_no, message })?;
        out.push(record);
    }
    Ok(out)
}

/// Reads and validates a JSONL record file.
pub fn parse_records<T: DeserializeOwned + Validate>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

/// One JSON object per line in canonical field order.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::validation(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let text = to_jsonl(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Converts logit dumps into entropy records, keeping all passthrough fields.
pub fn extract_entropies(dumps: &[LogitDumpRecord], max_len: usize) -> Result<Vec<LabeledRecord>> {
    dumps
        .iter()
        .map(|d| {
            let dists = d
                .top_probs
                .iter()
                .map(|p| TokenDistribution::new(p.clone()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let seq = build_entropy_sequence(&dists, max_len)?;
            Ok(LabeledRecord {
                id: d.id.clone(),
                dataset: d.dataset.clone(),
                group: d.group.clone(),
                entropies: seq.values().to_vec(),
                label: d.label,
                split: d.split,
            })
        })
        .collect()
}

/// Labels of records, failing on the first unlabeled one.
pub fn require_labels(records: &[LabeledRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            r.label
                .map(usize::from)
                .ok_or_else(|| Error::validation(format!("record `{}` is unlabeled", r.id)))
        })
        .collect()
}
