//! HTTP NLI backend: POST `{premise, hypothesis}`, receive a label and the
//! three class probabilities.

use serde::{Deserialize, Serialize};

use super::{check_inputs, Entailment, EntailmentLabel, EntailmentVerdict};
use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};

#[derive(Debug, Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
struct NliResponse {
    #[serde(default)]
    label: Option<EntailmentLabel>,
    probabilities: NliProbabilities,
}

#[derive(Debug, Deserialize)]
struct NliProbabilities {
    #[serde(alias = "entailment")]
    entails: f64,
    neutral: f64,
    #[serde(alias = "contradiction")]
    contradicts: f64,
}

/// Decodes an NLI response. The verdict label is the argmax of the
/// probabilities; a reported label that is not a maximum is rejected.
pub fn parse_nli_response(body: &[u8]) -> Result<EntailmentVerdict> {
    let resp: NliResponse = serde_json::from_slice(body)
        .map_err(|e| Error::MalformedBackendResponse(format!("NLI body: {e}")))?;
    let p = &resp.probabilities;
    let ranked = [
        (EntailmentLabel::Neutral, p.neutral),
        (EntailmentLabel::Contradicts, p.contradicts),
        (EntailmentLabel::Entails, p.entails),
    ];
    for (label, prob) in ranked {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::MalformedBackendResponse(format!(
                "probability for {label} is {prob}, outside [0, 1]"
            )));
        }
    }
    let max = ranked.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let label = match resp.label {
        Some(l) => {
            let prob = ranked.iter().find(|r| r.0 == l).map(|r| r.1).unwrap_or(0.0);
            if prob < max {
                return Err(Error::MalformedBackendResponse(format!(
                    "label {l} disagrees with the argmax of the probabilities"
                )));
            }
            l
        }
        // ties resolve in the order neutral, contradicts, entails
        None => ranked.iter().find(|r| r.1 == max).map(|r| r.0).unwrap(),
    };
    Ok(EntailmentVerdict { label, score: max })
}

#[derive(Debug, Clone)]
pub struct HttpEntailment {
    client: JsonClient,
    url: String,
}

impl HttpEntailment {
    pub fn new(url: impl Into<String>, http: HttpSettings) -> Result<Self> {
        Ok(HttpEntailment {
            client: JsonClient::new(http)?,
            url: url.into(),
        })
    }
}

/// Answers are only meaningful next to their question, so both sides of the
/// pair are framed as `question + " " + answer`.
pub(crate) fn frame(question_text: &str, answer: &str) -> String {
    format!("{question_text} {answer}")
}

impl Entailment for HttpEntailment {
    fn entails(&self, question_text: &str, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        check_inputs(question_text, premise, hypothesis)?;
        let premise = frame(question_text, premise);
        let hypothesis = frame(question_text, hypothesis);
        let body = self.client.post(
            &self.url,
            &NliRequest {
                premise: &premise,
                hypothesis: &hypothesis,
            },
        )?;
        parse_nli_response(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_argmax() {
        let v = parse_nli_response(
            br#"{"label": "entails", "probabilities": {"entails": 0.8, "neutral": 0.15, "contradicts": 0.05}}"#,
        )
        .unwrap();
        assert_eq!(v.label, EntailmentLabel::Entails);
        assert!((v.score - 0.8).abs() < 1e-12);

        let v = parse_nli_response(
            br#"{"probabilities": {"entailment": 0.1, "neutral": 0.2, "contradiction": 0.7}}"#,
        )
        .unwrap();
        assert_eq!(v.label, EntailmentLabel::Contradicts);
    }

    #[test]
    fn rejects_inconsistent_or_broken_bodies() {
        for body in [
            &br#"{"label": "neutral", "probabilities": {"entails": 0.8, "neutral": 0.1, "contradicts": 0.1}}"#[..],
            br#"{"label": "entails", "probabilities": {"entails": 1.5, "neutral": 0.1, "contradicts": 0.1}}"#,
            br#"{"label": "entails"}"#,
            br#"{"label": "maybe", "probabilities": {"entails": 0.8, "neutral": 0.1, "contradicts": 0.1}}"#,
            br#"[]"#,
        ] {
            assert!(matches!(
                parse_nli_response(body),
                Err(Error::MalformedBackendResponse(_))
            ));
        }
    }

    #[test]
    fn framing_prefixes_the_question() {
        assert_eq!(frame("When did it sink?", "1912"), "When did it sink? 1912");
    }
}
