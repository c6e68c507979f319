use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::data::Validate;
use crate::error::{Error, Result};
use crate::metrics::macro_f1_from_labels;

/// Sampled answers to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSet {
    pub question_id: String,
    pub responses: Vec<String>,
    /// Precomputed clusters as index sets over `responses`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl Validate for ResponseSet {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.responses.len() < 2 {
            return Err(format!("question `{}` needs at least 2 responses", self.question_id));
        }
        if let Some(c) = &self.clusters {
            ClusterPartition::new(c.clone(), self.responses.len()).map_err(|e| e.to_string())?;
        }
        match self.label {
            Some(l) if l > 1 => Err(format!("label {l} outside the label domain {{0, 1}}")),
            _ => Ok(()),
        }
    }
}

/// Disjoint, exhaustive index sets over `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    clusters: Vec<Vec<usize>>,
    n: usize,
}

impl ClusterPartition {
    pub fn new(clusters: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if clusters.is_empty() || clusters.iter().any(Vec::is_empty) {
            return Err(Error::validation("partition needs at least one non-empty cluster"));
        }
        let mut seen = vec![false; n];
        for &i in clusters.iter().flatten() {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!("index {i} is out of range or repeated in the partition")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!("index {i} is not covered by the partition")));
        }
        Ok(Self { clusters, n })
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    /// Cluster shares `|C_k| / n`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.len() as f64 / self.n as f64).collect()
    }
}

/// Decides whether two responses mean the same thing (in both directions).
pub trait EquivalenceOracle {
    fn equivalent(&mut self, a: &str, b: &str) -> std::result::Result<bool, String>;
}

/// Byte-for-byte equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl EquivalenceOracle for ExactMatch {
    fn equivalent(&mut self, a: &str, b: &str) -> std::result::Result<bool, String> {
        Ok(a == b)
    }
}

/// Equality after lowercasing, dropping punctuation and collapsing whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatch;

impl NormalizedMatch {
    pub fn normalize(s: &str) -> String {
        let kept: String = s
            .chars()
            .filter(|c| !c.is_ascii_punctuation())
            .flat_map(char::to_lowercase)
            .collect();
        kept.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl EquivalenceOracle for NormalizedMatch {
    fn equivalent(&mut self, a: &str, b: &str) -> std::result::Result<bool, String> {
        Ok(Self::normalize(a) == Self::normalize(b))
    }
}

/// Field separator between the two responses in an adapter request.
pub const ADAPTER_SEPARATOR: char = '\u{1f}';

/// Talks to an external process: one `A<US>B` request line per pair, one `1`/`0` reply line.
pub struct ProcessOracle {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessOracle {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }
}

impl EquivalenceOracle for ProcessOracle {
    fn equivalent(&mut self, a: &str, b: &str) -> std::result::Result<bool, String> {
        if [a, b].iter().any(|s| s.contains(['\n', '\r', ADAPTER_SEPARATOR])) {
            return Err("response contains a newline or the separator character".into());
        }
        writeln!(self.stdin, "{a}{ADAPTER_SEPARATOR}{b}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| format!("adapter write failed: {e}"))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| format!("adapter read failed: {e}"))?;
        match (n, line.trim()) {
            (0, _) => Err("adapter closed its output".into()),
            (_, "1") => Ok(true),
            (_, "0") => Ok(false),
            (_, other) => Err(format!("adapter replied `{other}`, expected 1 or 0")),
        }
    }
}

impl Drop for ProcessOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Greedy single pass: each response joins the first cluster whose first member
/// the oracle deems equivalent, otherwise it opens a new cluster.
pub fn cluster_responses<O: EquivalenceOracle + ?Sized>(rs: &ResponseSet, oracle: &mut O) -> Result<ClusterPartition> {
    rs.validate().map_err(Error::Validation)?;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, resp) in rs.responses.iter().enumerate() {
        let mut home = None;
        for (k, c) in clusters.iter().enumerate() {
            let rep = c[0];
            let same = oracle
                .equivalent(&rs.responses[rep], resp)
                .map_err(|message| Error::Oracle { left: rep, right: i, message })?;
            if same {
                home = Some(k);
                break;
            }
        }
        match home {
            Some(k) => clusters[k].push(i),
            None => clusters.push(vec![i]),
        }
    }
    ClusterPartition::new(clusters, rs.responses.len())
}

/// Entropy in nats of the cluster shares `|C_k| / n`.
pub fn discrete_semantic_entropy(partition: &ClusterPartition, n: usize) -> Result<f64> {
    if partition.num_clusters() == 0 {
        return Err(Error::validation("empty partition"));
    }
    if partition.num_items() != n {
        return Err(Error::validation(format!(
            "partition covers {} responses, expected {n}",
            partition.num_items()
        )));
    }
    let h: f64 = partition
        .probabilities()
        .iter()
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    /// Scores strictly above this are predicted as class 1.
    pub threshold: f64,
    pub macro_f1: f64,
}

/// Candidate cutoffs: −∞, midpoints between adjacent distinct sorted scores, +∞.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = vec![f64::NEG_INFINITY];
    out.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Cutoff maximizing macro-F1 of `score > γ`; ties go to the smallest γ.
pub fn fit_threshold(scores: &[f64], labels: &[usize]) -> Result<ThresholdFit> {
    if scores.len() != labels.len() {
        return Err(Error::dims("fit_threshold", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("fit_threshold: scores must be finite"));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::validation("fit_threshold needs both labels present (single-class input)"));
    }
    let mut best: Option<ThresholdFit> = None;
    for threshold in threshold_candidates(scores) {
        let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s > threshold)).collect();
        let f = macro_f1_from_labels(labels, &pred)?;
        if best.is_none_or(|b| f > b.macro_f1) {
            best = Some(ThresholdFit { threshold, macro_f1: f });
        }
    }
    Ok(best.expect("candidate list is never empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(responses: &[&str]) -> ResponseSet {
        ResponseSet {
            question_id: "q".into(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            clusters: None,
            label: None,
        }
    }

    struct Always;
    impl EquivalenceOracle for Always {
        fn equivalent(&mut self, _: &str, _: &str) -> std::result::Result<bool, String> {
            Ok(true)
        }
    }

    struct Failing;
    impl EquivalenceOracle for Failing {
        fn equivalent(&mut self, _: &str, _: &str) -> std::result::Result<bool, String> {
            Err("model offline".into())
        }
    }

    #[test]
    fn clustering_examples() {
        let p = cluster_responses(&set(&["x"; 10]), &mut ExactMatch).unwrap();
        assert_eq!(p.clusters(), &[(0..10).collect::<Vec<_>>()]);
        let distinct: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = distinct.iter().map(String::as_str).collect();
        assert_eq!(cluster_responses(&set(&refs), &mut ExactMatch).unwrap().num_clusters(), 10);
        let p = cluster_responses(&set(&["a", "b", "a", "b", "a"]), &mut ExactMatch).unwrap();
        assert_eq!(p.clusters(), &[vec![0, 2, 4], vec![1, 3]]);
    }

    #[test]
    fn normalized_oracle() {
        assert_eq!(NormalizedMatch::normalize("  Paris,  France! "), "paris france");
        let p = cluster_responses(&set(&["Paris.", "paris", "PARIS!", "Lyon"]), &mut NormalizedMatch).unwrap();
        assert_eq!(p.num_clusters(), 2);
    }

    #[test]
    fn oracle_failure_names_pair() {
        let err = cluster_responses(&set(&["a", "b"]), &mut Failing).unwrap_err();
        assert!(matches!(err, Error::Oracle { left: 0, right: 1, .. }), "{err}");
    }

    #[test]
    fn process_adapter_round_trip() {
        let script = r#"while IFS= read -r line; do a="${line%%$(printf '\037')*}"; b="${line#*$(printf '\037')}"; if [ "$a" = "$b" ]; then echo 1; else echo 0; fi; done"#;
        let mut oracle = ProcessOracle::spawn("sh", &["-c".to_string(), script.to_string()]).unwrap();
        let p = cluster_responses(&set(&["a", "b", "a", "c b", "c b"]), &mut oracle).unwrap();
        assert_eq!(p.clusters(), &[vec![0, 2], vec![1], vec![3, 4]]);
        assert!(oracle.equivalent("x\ny", "x").is_err());
    }

    #[test]
    fn entropy_examples() {
        let one = ClusterPartition::new(vec![(0..10).collect()], 10).unwrap();
        assert_eq!(discrete_semantic_entropy(&one, 10).unwrap(), 0.0);
        let halves = ClusterPartition::new(vec![(0..5).collect(), (5..10).collect()], 10).unwrap();
        assert!((discrete_semantic_entropy(&halves, 10).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = ClusterPartition::new(vec![(0..7).collect(), vec![7, 8], vec![9]], 10).unwrap();
        // Independent evaluation with the log of a product.
        let oracle = -(0.7f64.powf(0.7) * 0.2f64.powf(0.2) * 0.1f64.powf(0.1)).ln();
        let h = discrete_semantic_entropy(&p, 10).unwrap();
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.801819).abs() < 1e-6);
        assert!(discrete_semantic_entropy(&p, 11).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(ClusterPartition::new(vec![], 0).is_err());
        assert!(ClusterPartition::new(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(ClusterPartition::new(vec![vec![0]], 2).is_err());
        assert!(ClusterPartition::new(vec![vec![0, 5]], 2).is_err());
    }

    /// Exhaustive sweep written independently of `fit_threshold`.
    fn brute_force(scores: &[f64], labels: &[usize]) -> (f64, f64) {
        let mut uniq: Vec<f64> = scores.to_vec();
        uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        uniq.dedup();
        let mut cands = vec![f64::NEG_INFINITY];
        for i in 1..uniq.len() {
            cands.push((uniq[i - 1] + uniq[i]) / 2.0);
        }
        cands.push(f64::INFINITY);
        let mut best = (f64::NAN, -1.0);
        for g in cands {
            let mut f1s = [0.0; 2];
            for (c, f1) in f1s.iter_mut().enumerate() {
                let pred_c = |s: f64| usize::from(s > g) == c;
                let tp = scores.iter().zip(labels).filter(|(s, l)| pred_c(**s) && **l == c).count() as f64;
                let pp = scores.iter().filter(|s| pred_c(**s)).count() as f64;
                let ap = labels.iter().filter(|l| **l == c).count() as f64;
                *f1 = if pp + ap == 0.0 { 0.0 } else { 2.0 * tp / (pp + ap) };
            }
            let m = (f1s[0] + f1s[1]) / 2.0;
            if m > best.1 + 1e-15 {
                best = (g, m);
            }
        }
        best
    }

    #[test]
    fn threshold_examples() {
        let fit = fit_threshold(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(fit.threshold, 0.5);
        assert_eq!(fit.macro_f1, 1.0);
        assert!(fit_threshold(&[0.1, 0.2], &[0, 0]).is_err());

        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        let fit = fit_threshold(&scores, &labels).unwrap();
        let (g, m) = brute_force(&scores, &labels);
        assert!((fit.threshold - g).abs() < 1e-12 && (fit.macro_f1 - m).abs() < 1e-12);
        assert!((fit.threshold - 0.225).abs() < 1e-12);
        assert!((fit.macro_f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn entropy_bounds(sizes in prop::collection::vec(1usize..6, 1..8)) {
            let mut clusters = Vec::new();
            let mut next = 0;
            for s in &sizes {
                clusters.push((next..next + s).collect::<Vec<_>>());
                next += s;
            }
            let p = ClusterPartition::new(clusters, next).unwrap();
            let total: f64 = p.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let h = discrete_semantic_entropy(&p, next).unwrap();
            let k = sizes.len() as f64;
            prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
            if sizes.iter().all(|&s| s == sizes[0]) {
                prop_assert!((h - k.ln()).abs() < 1e-12);
            }
        }

        #[test]
        fn all_equivalent_oracle_gives_one_cluster(responses in prop::collection::vec(".{0,6}", 2..12)) {
            let rs = ResponseSet { question_id: "q".into(), responses, clusters: None, label: None };
            prop_assert_eq!(cluster_responses(&rs, &mut Always).unwrap().num_clusters(), 1);
        }

        #[test]
        fn threshold_beats_trivial_and_matches_sweep(
            pairs in prop::collection::vec((0u8..20, 0usize..2), 2..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 4.0).collect();
            let mut labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fit = fit_threshold(&scores, &labels).unwrap();
            let n = labels.len();
            let all_one = macro_f1_from_labels(&labels, &vec![1; n]).unwrap();
            let all_zero = macro_f1_from_labels(&labels, &vec![0; n]).unwrap();
            prop_assert!(fit.macro_f1 >= all_one && fit.macro_f1 >= all_zero);
            let (_, m) = brute_force(&scores, &labels);
            prop_assert!((fit.macro_f1 - m).abs() < 1e-12);
        }
    }
}
