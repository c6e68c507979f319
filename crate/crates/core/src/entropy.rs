//! Per-token Shannon entropy over top-k next-token probabilities.
//!
//! All entropies are in nats. Candidate lists are capped at 100 entries and are
//! renormalized to unit mass before the entropy sum, so a distribution that was
//! cut from a larger vocabulary is treated as a proper distribution over its
//! retained candidates.

use serde::{Deserialize, Serialize};

use crate::error::{DistributionError, Error, Result};

/// Maximum number of candidate tokens per generation step.
pub const MAX_CANDIDATES: usize = 100;

/// Default truncation length for entropy sequences.
pub const DEFAULT_MAX_LEN: usize = 64;

/// Probabilities below this contribute nothing to the entropy sum.
const PROB_FLOOR: f64 = 1e-12;

/// Allowed deviation from unit mass after renormalization.
const MASS_TOLERANCE: f64 = 1e-6;

/// Upper bound on any token entropy, `ln(100)`.
pub fn max_entropy() -> f64 {
    (MAX_CANDIDATES as f64).ln()
}

/// Candidate-token probabilities for one generation step, highest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates `probs` and rescales them to sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        if probs.len() > MAX_CANDIDATES {
            return Err(DistributionError::TooManyCandidates {
                len: probs.len(),
                max: MAX_CANDIDATES,
            });
        }
        for (index, &value) in probs.iter().enumerate() {
            if value < 0.0 {
                return Err(DistributionError::NegativeProbability { index, value });
            }
            if !value.is_finite() || value > 1.0 {
                return Err(DistributionError::OutOfRange { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) {
            return Err(DistributionError::NotNormalized { sum });
        }
        let probs: Vec<f64> = probs.into_iter().map(|p| p / sum).collect();
        let renormalized: f64 = probs.iter().sum();
        if (renormalized - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum: renormalized });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Shannon entropy `-sum p ln p` of one step, with `0 ln 0 = 0`.
pub fn compute_token_entropy(dist: &TokenDistribution) -> f64 {
    let h: f64 = dist
        .probs
        .iter()
        .filter(|&&p| p >= PROB_FLOOR)
        .map(|&p| -p * p.ln())
        .sum();
    // Rounding can leave a tiny negative value for one-hot inputs.
    h.max(0.0)
}

/// Entropy values of one generated response, truncated to a maximum length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySequence {
    values: Vec<f64>,
    source_len: usize,
}

impl EntropySequence {
    /// Wraps already-computed entropies, truncating to `max_len`.
    pub fn from_values(values: &[f64], max_len: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("entropy sequence is empty"));
        }
        if max_len == 0 {
            return Err(Error::validation("max_len must be positive"));
        }
        let bound = max_entropy() + 1e-9;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= bound))
        {
            return Err(Error::validation(format!(
                "entropy value {v} at position {i} is outside [0, ln(100)]"
            )));
        }
        let kept = values.len().min(max_len);
        Ok(Self {
            values: values[..kept].to_vec(),
            source_len: values.len(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Token count of the response before truncation.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Maps each step's distribution to its entropy, keeping the first `max_len` steps.
pub fn build_entropy_sequence(dists: &[TokenDistribution], max_len: usize) -> Result<EntropySequence> {
    if dists.is_empty() {
        return Err(Error::validation("no token distributions supplied"));
    }
    if max_len == 0 {
        return Err(Error::validation("max_len must be positive"));
    }
    let values = dists
        .iter()
        .take(max_len)
        .map(compute_token_entropy)
        .collect();
    Ok(EntropySequence {
        values,
        source_len: dists.len(),
    })
}
