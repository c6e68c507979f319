use crate::entropy::{max_entropy, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::nn::RngStream;

use super::{LabeledRecord, Split};

/// Per-class entropy generator: Gaussian base level plus an additive burst on the first positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub mean: f64,
    pub std: f64,
    pub burst_amplitude: f64,
    pub burst_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_records: usize,
    /// Fraction of records labeled 1.
    pub class1_fraction: f64,
    pub class0: Regime,
    pub class1: Regime,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-class fraction of records tagged `split = test`.
    pub test_fraction: f64,
    pub dataset: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 2000,
            class1_fraction: 0.5,
            class0: Regime {
                mean: 0.8,
                std: 0.3,
                burst_amplitude: 0.0,
                burst_width: 0,
            },
            class1: Regime {
                mean: 2.2,
                std: 0.3,
                burst_amplitude: 1.0,
                burst_width: 8,
            },
            min_len: 8,
            max_len: DEFAULT_MAX_LEN,
            test_fraction: 0.2,
            dataset: "synthetic".to_string(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Both classes drawn from the class-0 regime: labels carry no signal.
    pub fn null_control(&self) -> Self {
        Self {
            class1: self.class0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::validation("synthetic config: n_records must be positive"));
        }
        if !(0.0..=1.0).contains(&self.class1_fraction) {
            return Err(Error::validation("synthetic config: class1_fraction must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::validation("synthetic config: test_fraction must be in [0, 1)"));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > DEFAULT_MAX_LEN {
            return Err(Error::validation(format!(
                "synthetic config: lengths must satisfy 1 <= min_len <= max_len <= {DEFAULT_MAX_LEN}"
            )));
        }
        for (name, r) in [("class0", &self.class0), ("class1", &self.class1)] {
            if !(0.0..=max_entropy()).contains(&r.mean) {
                return Err(Error::validation(format!("synthetic config: {name} mean outside [0, ln 100]")));
            }
            if !(r.std >= 0.0 && r.std.is_finite() && r.burst_amplitude.is_finite()) {
                return Err(Error::validation(format!("synthetic config: {name} has an invalid spread or burst")));
            }
        }
        let (n0, n1) = self.class_counts();
        if self.class1_fraction > 0.0 && self.class1_fraction < 1.0 && (n0 == 0 || n1 == 0) {
            return Err(Error::validation(
                "synthetic config: class balance requires both classes but only one fits",
            ));
        }
        Ok(())
    }

    fn class_counts(&self) -> (usize, usize) {
        let n1 = (self.n_records as f64 * self.class1_fraction).round() as usize;
        (self.n_records - n1, n1)
    }
}

/// Draws a labeled dataset from the two regimes. Deterministic under `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<LabeledRecord>> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed);
    let (n0, n1) = config.class_counts();
    let mut labels: Vec<u8> = std::iter::repeat_n(0, n0).chain(std::iter::repeat_n(1, n1)).collect();
    rng.shuffle(&mut labels);

    let mut splits = vec![Split::Train; labels.len()];
    for class in 0..2u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_test = (members.len() as f64 * config.test_fraction).round() as usize;
        rng.shuffle(&mut members);
        for &i in &members[..n_test] {
            splits[i] = Split::Test;
        }
    }

    let bound = max_entropy();
    Ok(labels
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (&label, split))| {
            let regime = if label == 1 { &config.class1 } else { &config.class0 };
            let len = rng.int_inclusive(config.min_len, config.max_len);
            let entropies = (0..len)
                .map(|t| {
                    let burst = if t < regime.burst_width { regime.burst_amplitude } else { 0.0 };
                    (rng.normal(regime.mean, regime.std) + burst).clamp(0.0, bound)
                })
                .collect();
            LabeledRecord {
                id: format!("synth-{i:05}"),
                dataset: config.dataset.clone(),
                group: None,
                entropies,
                label: Some(label),
                split,
            }
        })
        .collect())
}
