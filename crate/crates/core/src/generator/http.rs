//! OpenAI-compatible completions backend.

use serde::{Deserialize, Serialize};

use super::{AnswerSample, GenerationRequest, Generator, PromptTemplate, Question};
use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};
use crate::seed::derive_seed;

#[derive(Debug, Clone)]
pub struct HttpGeneratorConfig {
    pub url: String,
    pub model: String,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    /// Upper bound on concurrent requests per `sample_answers` call.
    pub fanout: usize,
    pub prompt: PromptTemplate,
    pub http: HttpSettings,
}

impl HttpGeneratorConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpGeneratorConfig {
            url: url.into(),
            model: model.into(),
            max_tokens: 32,
            stop: vec!["\n".into()],
            fanout: 4,
            prompt: PromptTemplate::default(),
            http: HttpSettings::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    logprobs: bool,
    seed: u64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    text: String,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    token_logprobs: Option<Vec<Option<f64>>>,
}

/// Decodes a completions response body into samples, in choice-index order.
/// Every choice must carry per-token log-probabilities.
pub fn parse_completion_response(body: &[u8]) -> Result<Vec<AnswerSample>> {
    let resp: CompletionResponse = serde_json::from_slice(body)
        .map_err(|e| Error::MalformedBackendResponse(format!("completions body: {e}")))?;
    let mut choices = resp.choices;
    if choices.iter().all(|c| c.index.is_some()) {
        choices.sort_by_key(|c| c.index);
    }
    choices
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let lps = c
                .logprobs
                .and_then(|l| l.token_logprobs)
                .ok_or_else(|| {
                    Error::MalformedBackendResponse(format!("choice {i} has no token log-probabilities"))
                })?
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| {
                    Error::MalformedBackendResponse(format!("choice {i} has a null token log-probability"))
                })?;
            AnswerSample::new(c.text.trim(), lps)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    client: JsonClient,
    config: HttpGeneratorConfig,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Result<Self> {
        if config.fanout == 0 {
            return Err(Error::Config("generator fan-out must be at least 1".into()));
        }
        Ok(HttpGenerator {
            client: JsonClient::new(config.http.clone())?,
            config,
        })
    }

    fn complete(&self, prompt: &str, n: usize, temperature: f64, seed: u64) -> Result<Vec<AnswerSample>> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            n,
            temperature,
            logprobs: true,
            seed,
            max_tokens: self.config.max_tokens,
            stop: &self.config.stop,
        };
        let bytes = self.client.post(&self.config.url, &body)?;
        let samples = parse_completion_response(&bytes)?;
        if samples.len() != n {
            return Err(Error::MalformedBackendResponse(format!(
                "asked for {n} choices, got {}",
                samples.len()
            )));
        }
        Ok(samples)
    }
}

/// Splits `n` into at most `parts` near-equal positive chunk sizes.
fn chunk_sizes(n: usize, parts: usize) -> Vec<usize> {
    let parts = parts.clamp(1, n.max(1));
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .filter(|&c| c > 0)
        .collect()
}

impl Generator for HttpGenerator {
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>> {
        req.validate()?;
        let prompt = self
            .config
            .prompt
            .render(&req.question.text, &req.context_documents);
        let chunks = chunk_sizes(req.num_samples, self.config.fanout);
        if chunks.len() == 1 {
            return self.complete(&prompt, req.num_samples, req.temperature, req.seed);
        }
        let results: Vec<Result<Vec<AnswerSample>>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let seed = derive_seed(req.seed, &["chunk", &i.to_string()]);
                    let prompt = prompt.as_str();
                    s.spawn(move || self.complete(prompt, n, req.temperature, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("completion worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(req.num_samples);
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn greedy_answer(&self, question: &Question, context_documents: &[String]) -> Result<AnswerSample> {
        let prompt = self.config.prompt.render(&question.text, context_documents);
        let mut samples = self.complete(&prompt, 1, 0.0, 0)?;
        Ok(samples.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_choices_in_index_order() {
        let body = br#"{"choices": [
            {"index": 1, "text": " Lyon\n", "logprobs": {"token_logprobs": [-1.5]}},
            {"index": 0, "text": " Paris", "logprobs": {"tokens": ["Par", "is"], "token_logprobs": [-0.1, -0.2]}}
        ]}"#;
        let s = parse_completion_response(body).unwrap();
        assert_eq!(s[0].text, "Paris");
        assert_eq!(s[0].token_count, 2);
        assert_eq!(s[1].text, "Lyon");
    }

    #[test]
    fn missing_logprobs_is_malformed() {
        for body in [
            &br#"{"choices": [{"text": "Paris"}]}"#[..],
            br#"{"choices": [{"text": "Paris", "logprobs": null}]}"#,
            br#"{"choices": [{"text": "Paris", "logprobs": {"token_logprobs": [null, -0.1]}}]}"#,
            br#"{"choices": [{"text": "Paris", "logprobs": {"token_logprobs": []}}]}"#,
            br#"not json"#,
        ] {
            assert!(matches!(
                parse_completion_response(body),
                Err(Error::MalformedBackendResponse(_))
            ));
        }
    }

    #[test]
    fn chunking() {
        assert_eq!(chunk_sizes(10, 4), [3, 3, 2, 2]);
        assert_eq!(chunk_sizes(2, 4), [1, 1]);
        assert_eq!(chunk_sizes(1, 1), [1]);
    }

    #[test]
    fn request_body_shape() {
        let stop = vec!["\n".to_string()];
        let body = CompletionRequest {
            model: "m",
            prompt: "Q: x A:",
            n: 3,
            temperature: 1.0,
            logprobs: true,
            seed: 9,
            max_tokens: 16,
            stop: &stop,
        };
        let v = serde_json::to_value(&body).unwrap();
        assert_eq!(v["logprobs"], true);
        assert_eq!(v["n"], 3);
        assert_eq!(v["seed"], 9);
        assert_eq!(v["model"], "m");
    }
}
