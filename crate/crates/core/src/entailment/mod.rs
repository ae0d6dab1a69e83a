//! Directional textual entailment between two candidate answers, and the
//! bidirectional check that defines semantic equivalence.

mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::{parse_nli_response, HttpEntailment};
pub use mock::{MockEntailment, PhraseTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentLabel {
    #[serde(alias = "entailment")]
    Entails,
    Neutral,
    #[serde(alias = "contradiction")]
    Contradicts,
}

impl fmt::Display for EntailmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntailmentLabel::Entails => "entails",
            EntailmentLabel::Neutral => "neutral",
            EntailmentLabel::Contradicts => "contradicts",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub label: EntailmentLabel,
    /// Backend confidence in `label`, within [0, 1].
    pub score: f64,
}

impl EntailmentVerdict {
    pub fn certain(label: EntailmentLabel) -> Self {
        EntailmentVerdict { label, score: 1.0 }
    }
}

pub trait Entailment: Send + Sync {
    /// Does `premise_answer` entail `hypothesis_answer`, read as answers to
    /// `question_text`?
    fn entails(&self, question_text: &str, premise_answer: &str, hypothesis_answer: &str)
        -> Result<EntailmentVerdict>;
}

impl<E: Entailment + ?Sized> Entailment for &E {
    fn entails(&self, q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
        (**self).entails(q, p, h)
    }
}

impl<E: Entailment + ?Sized> Entailment for Box<E> {
    fn entails(&self, q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
        (**self).entails(q, p, h)
    }
}

pub(crate) fn check_inputs(question_text: &str, premise: &str, hypothesis: &str) -> Result<()> {
    for (name, s) in [("question", question_text), ("premise", premise), ("hypothesis", hypothesis)] {
        if s.trim().is_empty() {
            return Err(Error::InvalidRequest(format!("entailment {name} is empty")));
        }
    }
    Ok(())
}

/// True iff each answer entails the other. Both directions are always
/// queried, so the relation is symmetric in `a` and `b`.
pub fn bidirectionally_equivalent<E: Entailment + ?Sized>(
    backend: &E,
    question_text: &str,
    a: &str,
    b: &str,
) -> Result<bool> {
    let forward = backend.entails(question_text, a, b)?;
    let backward = backend.entails(question_text, b, a)?;
    Ok(forward.label == EntailmentLabel::Entails && backward.label == EntailmentLabel::Entails)
}

type CacheKey = (String, String, String);

/// Memoizes verdicts per (question, premise, hypothesis).
pub struct CachedEntailment<E> {
    inner: E,
    memo: Mutex<HashMap<CacheKey, EntailmentVerdict>>,
}

impl<E: Entailment> CachedEntailment<E> {
    pub fn new(inner: E) -> Self {
        CachedEntailment {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.memo.lock().expect("entailment cache poisoned").len()
    }
}

impl<E: Entailment> Entailment for CachedEntailment<E> {
    fn entails(&self, q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
        let key = (q.to_owned(), p.to_owned(), h.to_owned());
        if let Some(v) = self.memo.lock().expect("entailment cache poisoned").get(&key) {
            return Ok(*v);
        }
        // the lock is not held across the backend call
        let verdict = self.inner.entails(q, p, h)?;
        self.memo
            .lock()
            .expect("entailment cache poisoned")
            .insert(key, verdict);
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl Entailment for Counting {
        fn entails(&self, _q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
            self.0.fetch_add(1, Ordering::SeqCst);
            // one-directional: "long" entails "short" only when it starts with it
            let label = if p.starts_with(h) {
                EntailmentLabel::Entails
            } else {
                EntailmentLabel::Neutral
            };
            Ok(EntailmentVerdict::certain(label))
        }
    }

    #[test]
    fn equivalence_needs_both_directions() {
        let b = Counting(AtomicUsize::new(0));
        assert!(!bidirectionally_equivalent(&b, "q", "Paris France", "Paris").unwrap());
        assert!(!bidirectionally_equivalent(&b, "q", "Paris", "Paris France").unwrap());
        assert!(bidirectionally_equivalent(&b, "q", "Paris", "Paris").unwrap());
    }

    #[test]
    fn cache_deduplicates_backend_calls() {
        let cached = CachedEntailment::new(Counting(AtomicUsize::new(0)));
        for _ in 0..3 {
            bidirectionally_equivalent(&cached, "q", "a", "b").unwrap();
        }
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 2);
        assert_eq!(cached.cached_len(), 2);
    }

    #[test]
    fn labels_serialize_in_snake_case() {
        let v = EntailmentVerdict::certain(EntailmentLabel::Contradicts);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"label":"contradicts","score":1.0}"#
        );
        let l: EntailmentLabel = serde_json::from_str(r#""entailment""#).unwrap();
        assert_eq!(l, EntailmentLabel::Entails);
    }
}
