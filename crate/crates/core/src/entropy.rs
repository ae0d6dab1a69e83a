//! Semantic entropy over answer samples.
//!
//! Samples are grouped into meaning clusters by bidirectional entailment.
//! Each sample's probability is its sequence probability renormalized over
//! the sample set; a cluster's probability is the sum over its members.
//! Semantic entropy is the mean negative log cluster probability:
//!
//! ```text
//! SE = -(1/|C|) * sum_i ln p(C_i)
//! ```
//!
//! Predictive entropy applies the same estimator to the individual samples,
//! ignoring meaning, and is kept as a baseline. All values are in nats.

use serde::{Deserialize, Serialize};

use crate::entailment::{bidirectionally_equivalent, Entailment};
use crate::error::{Error, Result};
use crate::generator::AnswerSample;
use crate::text::normalize_answer;

const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCluster {
    /// Strictly increasing sample indices.
    pub member_indices: Vec<usize>,
    /// Always the first member.
    pub representative_index: usize,
    /// Natural log of the cluster probability, once attached.
    pub log_prob: Option<f64>,
}

impl SemanticCluster {
    fn new(first: usize) -> Self {
        SemanticCluster {
            member_indices: vec![first],
            representative_index: first,
            log_prob: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<SemanticCluster>,
    pub num_samples: usize,
}

impl Clustering {
    /// Builds a clustering from explicit member lists, checking that they
    /// partition `0..num_samples` with increasing members.
    pub fn from_partition(num_samples: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; num_samples];
        let mut clusters = Vec::with_capacity(groups.len());
        for members in groups {
            if members.is_empty() || members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidRequest(
                    "cluster members must be non-empty and strictly increasing".into(),
                ));
            }
            for &m in &members {
                if m >= num_samples || std::mem::replace(&mut seen[m], true) {
                    return Err(Error::InvalidRequest(format!(
                        "sample {m} is out of range or in two clusters"
                    )));
                }
            }
            clusters.push(SemanticCluster {
                representative_index: members[0],
                member_indices: members,
                log_prob: None,
            });
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidRequest("clusters do not cover every sample".into()));
        }
        Ok(Clustering { clusters, num_samples })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster probabilities in creation order, if attached.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        self.clusters.iter().map(|c| c.log_prob.map(f64::exp)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub semantic_entropy: f64,
    pub predictive_entropy: f64,
    pub clustering: Clustering,
    pub normalized_sample_probs: Vec<f64>,
    pub length_normalized: bool,
}

fn sample_scores(samples: &[AnswerSample], length_normalized: bool) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            if length_normalized {
                s.total_logprob / s.token_count as f64
            } else {
                s.total_logprob
            }
        })
        .collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log of the softmax over sequence scores (log-softmax), computed with the
/// max-shift so no term overflows.
fn normalized_log_probs(samples: &[AnswerSample], length_normalized: bool) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let scores = sample_scores(samples, length_normalized);
    let z = log_sum_exp(scores.iter().copied());
    Ok(scores.into_iter().map(|s| (s - z).min(0.0)).collect())
}

/// Softmax of the sample scores: `total_logprob`, or `total_logprob /
/// token_count` when `length_normalized`.
pub fn normalize_sample_probs(samples: &[AnswerSample], length_normalized: bool) -> Result<Vec<f64>> {
    Ok(normalized_log_probs(samples, length_normalized)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Greedy, order-deterministic clustering. Samples are visited by index and
/// compared against the representative (first member) of each existing
/// cluster in creation order; a sample joins the first equivalent cluster or
/// opens a new one. A sample whose text normalizes to nothing always gets a
/// cluster of its own.
///
/// `equivalent(question, representative, candidate)` decides equivalence.
pub fn cluster_samples<F>(question_text: &str, samples: &[AnswerSample], mut equivalent: F) -> Result<Clustering>
where
    F: FnMut(&str, &str, &str) -> Result<bool>,
{
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let degenerate: Vec<bool> = samples
        .iter()
        .map(|s| normalize_answer(&s.text).is_empty())
        .collect();
    let mut clusters: Vec<SemanticCluster> = Vec::new();
    'samples: for (i, sample) in samples.iter().enumerate() {
        if !degenerate[i] {
            for cluster in clusters.iter_mut() {
                let rep = cluster.representative_index;
                if degenerate[rep] {
                    continue;
                }
                if equivalent(question_text, &samples[rep].text, &sample.text)? {
                    cluster.member_indices.push(i);
                    continue 'samples;
                }
            }
        }
        clusters.push(SemanticCluster::new(i));
    }
    Ok(Clustering {
        clusters,
        num_samples: samples.len(),
    })
}

/// [`cluster_samples`] with bidirectional entailment from `backend`.
pub fn cluster_by_entailment<E: Entailment + ?Sized>(
    question_text: &str,
    samples: &[AnswerSample],
    backend: &E,
) -> Result<Clustering> {
    cluster_samples(question_text, samples, |q, a, b| {
        bidirectionally_equivalent(backend, q, a, b)
    })
}

/// Sets each cluster's `log_prob` to the log of its members' summed
/// probability.
pub fn attach_cluster_probs(clustering: &Clustering, normalized_probs: &[f64]) -> Result<Clustering> {
    if normalized_probs.len() != clustering.num_samples {
        return Err(Error::LengthMismatch {
            expected: clustering.num_samples,
            actual: normalized_probs.len(),
        });
    }
    let mut out = clustering.clone();
    let n = out.num_samples;
    for c in &mut out.clusters {
        let p: f64 = c.member_indices.iter().map(|&i| normalized_probs[i]).sum();
        c.log_prob = Some(if c.member_indices.len() == n { 0.0 } else { p.ln().min(0.0) });
    }
    Ok(out)
}

fn attach_cluster_log_probs(clustering: &Clustering, log_probs: &[f64]) -> Clustering {
    let mut out = clustering.clone();
    let n = out.num_samples;
    for c in &mut out.clusters {
        // a cluster holding every sample carries all the mass
        let lp = if c.member_indices.len() == n {
            0.0
        } else {
            log_sum_exp(c.member_indices.iter().map(|&i| log_probs[i]))
        };
        c.log_prob = Some(lp.min(0.0));
    }
    out
}

/// `-(1/|C|) * sum_i log p(C_i)`.
pub fn semantic_entropy(clustering: &Clustering) -> Result<f64> {
    if clustering.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut total = 0.0;
    for c in &clustering.clusters {
        total += c.log_prob.ok_or(Error::MissingClusterProbs)?;
    }
    Ok((-total / clustering.len() as f64).max(0.0))
}

/// `-(1/N) * sum_i ln p_i` over normalized sample probabilities.
pub fn predictive_entropy(normalized_probs: &[f64]) -> Result<f64> {
    if normalized_probs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let sum: f64 = normalized_probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidRequest(format!(
            "sample probabilities sum to {sum}, expected 1"
        )));
    }
    let total: f64 = normalized_probs.iter().map(|p| p.ln()).sum();
    Ok((-total / normalized_probs.len() as f64).max(0.0))
}

/// Cluster `samples`, attach probabilities and compute both entropies.
/// Probabilities are handled in log space throughout, so very unlikely
/// samples cannot underflow a cluster to zero.
pub fn estimate<F>(
    question_text: &str,
    samples: &[AnswerSample],
    length_normalized: bool,
    equivalent: F,
) -> Result<EntropyReport>
where
    F: FnMut(&str, &str, &str) -> Result<bool>,
{
    let log_probs = normalized_log_probs(samples, length_normalized)?;
    let clustering = cluster_samples(question_text, samples, equivalent)?;
    let clustering = attach_cluster_log_probs(&clustering, &log_probs);
    let semantic_entropy = semantic_entropy(&clustering)?;
    let predictive_entropy = (-log_probs.iter().sum::<f64>() / log_probs.len() as f64).max(0.0);
    Ok(EntropyReport {
        semantic_entropy,
        predictive_entropy,
        clustering,
        normalized_sample_probs: log_probs.into_iter().map(f64::exp).collect(),
        length_normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(text: &str, total: f64) -> AnswerSample {
        AnswerSample::new(text, vec![total]).unwrap()
    }

    fn with_probs(groups: Vec<Vec<usize>>, probs: &[f64]) -> Clustering {
        let c = Clustering::from_partition(probs.len(), groups).unwrap();
        attach_cluster_probs(&c, probs).unwrap()
    }

    fn exact(_: &str, a: &str, b: &str) -> Result<bool> {
        Ok(a == b)
    }

    #[test]
    fn softmax_examples() {
        let p = normalize_sample_probs(&[sample("a", -1.0), sample("b", -1.0)], false).unwrap();
        assert_eq!(p, [0.5, 0.5]);
        let p = normalize_sample_probs(&[sample("a", 0.4f64.ln()), sample("b", 0.1f64.ln())], false)
            .unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        assert_eq!(normalize_sample_probs(&[sample("a", -3.0)], false).unwrap(), [1.0]);
        assert!(matches!(normalize_sample_probs(&[], false), Err(Error::EmptySampleSet)));
    }

    #[test]
    fn softmax_survives_extreme_scores() {
        let p = normalize_sample_probs(&[sample("a", -5000.0), sample("b", -5001.0)], false).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn length_normalization_divides_by_token_count() {
        let long = AnswerSample::new("long", vec![-1.0, -1.0, -1.0, -1.0]).unwrap();
        let short = AnswerSample::new("short", vec![-1.0]).unwrap();
        let raw = normalize_sample_probs(&[long.clone(), short.clone()], false).unwrap();
        assert!(raw[0] < raw[1]);
        let per_token = normalize_sample_probs(&[long, short], true).unwrap();
        assert!((per_token[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clustering_examples() {
        let same: Vec<_> = (0..10).map(|_| sample("Paris", -0.1)).collect();
        let c = cluster_samples("q", &same, exact).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.clusters[0].member_indices, (0..10).collect::<Vec<_>>());

        let abab: Vec<_> = ["X", "Y", "X", "Y"].iter().map(|t| sample(t, -1.0)).collect();
        let c = cluster_samples("q", &abab, exact).unwrap();
        let members: Vec<_> = c.clusters.iter().map(|c| c.member_indices.clone()).collect();
        assert_eq!(members, [vec![0, 2], vec![1, 3]]);
        assert_eq!(c.clusters[1].representative_index, 1);
    }

    #[test]
    fn degenerate_answers_stay_alone() {
        let xs: Vec<_> = ["the", "Paris", "!!", "Paris"].iter().map(|t| sample(t, -1.0)).collect();
        let mut calls = 0;
        let c = cluster_samples("q", &xs, |_, _, _| {
            calls += 1;
            Ok(true)
        })
        .unwrap();
        let members: Vec<_> = c.clusters.iter().map(|c| c.member_indices.clone()).collect();
        assert_eq!(members, [vec![0], vec![1, 3], vec![2]]);
        assert_eq!(calls, 1);
    }

    #[test]
    fn cluster_probability_examples() {
        let c = with_probs(vec![vec![0, 1], vec![2, 3]], &[0.4, 0.3, 0.2, 0.1]);
        let p = c.probabilities().unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12);

        let n = 5;
        let c = with_probs((0..n).map(|i| vec![i]).collect(), &[0.2; 5]);
        for cl in &c.clusters {
            assert!((cl.log_prob.unwrap() + (n as f64).ln()).abs() < 1e-12);
        }

        let c = with_probs(vec![vec![0, 1, 2]], &[0.5, 0.25, 0.25]);
        assert_eq!(c.clusters[0].log_prob, Some(0.0));

        let bare = Clustering::from_partition(2, vec![vec![0, 1]]).unwrap();
        assert!(matches!(
            attach_cluster_probs(&bare, &[1.0]),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn entropy_examples() {
        let one = with_probs(vec![vec![0]], &[1.0]);
        assert_eq!(semantic_entropy(&one).unwrap(), 0.0);

        let halves = with_probs(vec![vec![0], vec![1]], &[0.5, 0.5]);
        assert!((semantic_entropy(&halves).unwrap() - 2f64.ln()).abs() < 1e-12);

        let skew = with_probs(vec![vec![0], vec![1]], &[0.7, 0.3]);
        let oracle = -(0.7f64.ln() + 0.3f64.ln()) / 2.0;
        assert!((semantic_entropy(&skew).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.7803239).abs() < 1e-6);

        let bare = Clustering::from_partition(1, vec![vec![0]]).unwrap();
        assert!(matches!(semantic_entropy(&bare), Err(Error::MissingClusterProbs)));
    }

    #[test]
    fn predictive_entropy_examples() {
        assert_eq!(predictive_entropy(&[1.0]).unwrap(), 0.0);
        assert!((predictive_entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let oracle = -(0.8f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((predictive_entropy(&[0.8, 0.2]).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.916291).abs() < 1e-6);
        assert!(matches!(predictive_entropy(&[]), Err(Error::EmptySampleSet)));
        assert!(predictive_entropy(&[0.5, 0.2]).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(Clustering::from_partition(3, vec![vec![0, 1], vec![2]]).is_ok());
        assert!(Clustering::from_partition(3, vec![vec![0, 1]]).is_err());
        assert!(Clustering::from_partition(3, vec![vec![1, 0], vec![2]]).is_err());
        assert!(Clustering::from_partition(2, vec![vec![0, 1], vec![1]]).is_err());
        assert!(Clustering::from_partition(2, vec![vec![0, 1], vec![]]).is_err());
    }

    #[test]
    fn estimate_matches_the_stepwise_path() {
        let xs: Vec<_> = [("X", 0.4), ("Y", 0.3), ("X", 0.2), ("Z", 0.1)]
            .iter()
            .map(|(t, p)| sample(t, f64::ln(*p)))
            .collect();
        let report = estimate("q", &xs, false, exact).unwrap();
        let probs = normalize_sample_probs(&xs, false).unwrap();
        let stepwise = attach_cluster_probs(&cluster_samples("q", &xs, exact).unwrap(), &probs).unwrap();
        assert!((report.semantic_entropy - semantic_entropy(&stepwise).unwrap()).abs() < 1e-12);
        assert!((report.predictive_entropy - predictive_entropy(&probs).unwrap()).abs() < 1e-12);
        assert_eq!(report.clustering.len(), 3);
        assert!(!report.length_normalized);
    }

    #[test]
    fn report_serializes_with_typed_field_names() {
        let xs = [sample("A", -1.0)];
        let report = estimate("q", &xs, false, exact).unwrap();
        let v = serde_json::to_value(&report).unwrap();
        for key in [
            "semantic_entropy",
            "predictive_entropy",
            "clustering",
            "normalized_sample_probs",
            "length_normalized",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["clustering"]["clusters"][0].get("member_indices").is_some());
    }
}
