//! Answer generation backends.
//!
//! A [`Generator`] produces sampled answers with per-token log-probabilities
//! (the raw material for entropy estimation) and a single greedy answer for
//! the final response. Two backends ship: a scripted [`MockGenerator`] for
//! offline runs and an [`HttpGenerator`] speaking the completions protocol.

mod http;
mod mock;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::{parse_completion_response, HttpGenerator, HttpGeneratorConfig};
pub use mock::{MockGenerator, MockScenario, PoolEntry, QuestionScript, ContextRule};
pub use prompt::PromptTemplate;

pub const DEFAULT_NUM_SAMPLES: usize = 10;
pub const DEFAULT_SAMPLING_TEMPERATURE: f64 = 1.0;

/// Tolerance for tiny positive log-probabilities reported by real backends.
const LOGPROB_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            gold_answers: Vec::new(),
        }
    }

    pub fn with_gold(mut self, gold: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.gold_answers = gold.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question: Question,
    /// Empty means closed-book generation.
    pub context_documents: Vec<String>,
    pub num_samples: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn closed_book(question: Question, seed: u64) -> Self {
        GenerationRequest {
            question,
            context_documents: Vec::new(),
            num_samples: DEFAULT_NUM_SAMPLES,
            temperature: DEFAULT_SAMPLING_TEMPERATURE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidRequest("num_samples must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        if self.question.text.trim().is_empty() {
            return Err(Error::InvalidRequest("question text is empty".into()));
        }
        Ok(())
    }
}

/// One generated answer with its natural-log token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub token_count: usize,
}

impl AnswerSample {
    /// Builds a sample, enforcing at least one token and finite, non-positive
    /// log-probabilities.
    pub fn new(text: impl Into<String>, token_logprobs: Vec<f64>) -> Result<Self> {
        if token_logprobs.is_empty() {
            return Err(Error::MalformedBackendResponse(
                "answer carries no token log-probabilities".into(),
            ));
        }
        let mut cleaned = Vec::with_capacity(token_logprobs.len());
        for lp in token_logprobs {
            if !lp.is_finite() || lp > LOGPROB_SLACK {
                return Err(Error::MalformedBackendResponse(format!(
                    "token log-probability {lp} is not a finite value <= 0"
                )));
            }
            cleaned.push(lp.min(0.0));
        }
        let total_logprob = cleaned.iter().sum();
        Ok(AnswerSample {
            text: text.into(),
            token_count: cleaned.len(),
            token_logprobs: cleaned,
            total_logprob,
        })
    }
}

pub trait Generator: Send + Sync {
    /// Draws `req.num_samples` answers at `req.temperature`.
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>>;

    /// One temperature-0 answer.
    fn greedy_answer(&self, question: &Question, context_documents: &[String])
        -> Result<AnswerSample>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>> {
        (**self).sample_answers(req)
    }

    fn greedy_answer(&self, question: &Question, context_documents: &[String]) -> Result<AnswerSample> {
        (**self).greedy_answer(question, context_documents)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>> {
        (**self).sample_answers(req)
    }

    fn greedy_answer(&self, question: &Question, context_documents: &[String]) -> Result<AnswerSample> {
        (**self).greedy_answer(question, context_documents)
    }
}
