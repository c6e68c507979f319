//! Comparison methods: discrete semantic entropy over sampled responses and
//! linear probes over fixed-width feature vectors.

mod probe;
mod semantic;

pub use probe::{probe_macro_f1, summary_features, train_linear_probe, LinearProbe, EARLY_WINDOW};
pub use semantic::{
    cluster_responses, discrete_semantic_entropy, fit_threshold, threshold_candidates, ClusterPartition,
    EquivalenceOracle, ExactMatch, NormalizedMatch, ProcessOracle, ResponseSet, ThresholdFit, ADAPTER_SEPARATOR,
};
