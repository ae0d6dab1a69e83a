//! Scripted generator for offline runs.
//!
//! A scenario maps each question id to a pool of candidate answers with
//! probabilities. Pools can be swapped when retrieved context contains given
//! marker strings, which is how tests script "retrieval fixes the answer".
//!
//! Sampling is systematic: one seeded uniform offset `u` picks strata
//! `(j + u) / n` through the inverse CDF of the tempered pool, and a seeded
//! shuffle orders the result. Each answer therefore appears within one of
//! its expected count `n * p`, and `(scenario, question, context, seed, n)`
//! fully determine the output.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnswerSample, GenerationRequest, Generator, Question};
use crate::error::{Error, Result};

const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub text: String,
    pub prob: f64,
    /// Synthetic per-token log-probabilities. Defaults to a single token
    /// carrying `ln(prob)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl PoolEntry {
    pub fn new(text: impl Into<String>, prob: f64) -> Self {
        PoolEntry {
            text: text.into(),
            prob,
            token_logprobs: None,
        }
    }

    fn to_sample(&self) -> Result<AnswerSample> {
        let lps = self
            .token_logprobs
            .clone()
            .unwrap_or_else(|| vec![self.prob.ln()]);
        AnswerSample::new(self.text.clone(), lps)
            .map_err(|e| Error::Scenario(format!("answer {:?}: {e}", self.text)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRule {
    /// Every marker must occur in at least one context document.
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default = "one")]
    pub min_docs: usize,
    pub pool: Vec<PoolEntry>,
}

fn one() -> usize {
    1
}

impl ContextRule {
    fn matches(&self, docs: &[String]) -> bool {
        docs.len() >= self.min_docs
            && self
                .contains
                .iter()
                .all(|m| docs.iter().any(|d| d.contains(m.as_str())))
    }
}

/// Either a bare pool or a pool plus context-conditioned overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuestionScript {
    Pool(Vec<PoolEntry>),
    Conditional {
        pool: Vec<PoolEntry>,
        #[serde(default)]
        with_context: Vec<ContextRule>,
    },
}

impl QuestionScript {
    fn pool_for(&self, docs: &[String]) -> &[PoolEntry] {
        match self {
            QuestionScript::Pool(pool) => pool,
            QuestionScript::Conditional { pool, with_context } => {
                if docs.is_empty() {
                    return pool;
                }
                with_context
                    .iter()
                    .find(|r| r.matches(docs))
                    .map_or(pool.as_slice(), |r| r.pool.as_slice())
            }
        }
    }

    fn pools(&self) -> Vec<&[PoolEntry]> {
        match self {
            QuestionScript::Pool(pool) => vec![pool],
            QuestionScript::Conditional { pool, with_context } => std::iter::once(pool.as_slice())
                .chain(with_context.iter().map(|r| r.pool.as_slice()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScenario {
    pub questions: BTreeMap<String, QuestionScript>,
}

impl MockScenario {
    pub fn from_json(json: &str) -> Result<Self> {
        let scenario: MockScenario =
            serde_json::from_str(json).map_err(|e| Error::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading scenario {}", path.display()), e))?;
        Self::from_json(&json)
    }

    pub fn validate(&self) -> Result<()> {
        for (id, script) in &self.questions {
            for pool in script.pools() {
                validate_pool(id, pool)?;
            }
        }
        Ok(())
    }
}

fn validate_pool(id: &str, pool: &[PoolEntry]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::Scenario(format!("question {id:?}: empty answer pool")));
    }
    let mut sum = 0.0;
    for entry in pool {
        if !(entry.prob > 0.0 && entry.prob <= 1.0) {
            return Err(Error::Scenario(format!(
                "question {id:?}: probability {} of {:?} is outside (0, 1]",
                entry.prob, entry.text
            )));
        }
        entry.to_sample()?;
        sum += entry.prob;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::Scenario(format!(
            "question {id:?}: pool probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    scenario: MockScenario,
}

impl MockGenerator {
    pub fn new(scenario: MockScenario) -> Result<Self> {
        scenario.validate()?;
        Ok(MockGenerator { scenario })
    }

    fn pool(&self, question: &Question, docs: &[String]) -> Result<&[PoolEntry]> {
        self.scenario
            .questions
            .get(&question.id)
            .map(|s| s.pool_for(docs))
            .ok_or_else(|| Error::Scenario(format!("no answer pool for question {:?}", question.id)))
    }
}

/// Highest probability, ties to the lexicographically smallest text.
fn argmax(pool: &[PoolEntry]) -> usize {
    let mut best = 0;
    for (i, e) in pool.iter().enumerate().skip(1) {
        let b = &pool[best];
        if e.prob > b.prob || (e.prob == b.prob && e.text < b.text) {
            best = i;
        }
    }
    best
}

/// Pool weights after temperature scaling, normalized. `temperature > 0`.
fn tempered_weights(pool: &[PoolEntry], temperature: f64) -> Vec<f64> {
    let scores: Vec<f64> = pool.iter().map(|e| e.prob.ln() / temperature).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|w| w / z).collect()
}

/// Entry indices chosen by seeded systematic sampling, in shuffled order.
pub(crate) fn systematic_draw(weights: &[f64], n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.random();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = weights.len() - 1;
    let mut picks: Vec<usize> = (0..n)
        .map(|j| {
            let u = (j as f64 + offset) / n as f64;
            cumulative.iter().position(|&c| u < c).unwrap_or(last)
        })
        .collect();
    picks.shuffle(&mut rng);
    picks
}

impl Generator for MockGenerator {
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>> {
        req.validate()?;
        let pool = self.pool(&req.question, &req.context_documents)?;
        let picks = if req.temperature == 0.0 {
            vec![argmax(pool); req.num_samples]
        } else {
            let weights = tempered_weights(pool, req.temperature);
            systematic_draw(&weights, req.num_samples, req.seed)
        };
        picks.into_iter().map(|i| pool[i].to_sample()).collect()
    }

    fn greedy_answer(&self, question: &Question, context_documents: &[String]) -> Result<AnswerSample> {
        let pool = self.pool(question, context_documents)?;
        pool[argmax(pool)].to_sample()
    }
}
