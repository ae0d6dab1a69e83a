//! Per-question call traces and deterministic replay.
//!
//! Every backend call the pipeline makes is recorded with its inputs,
//! outputs and latency. [`ReplayBackends`] serves a recorded trace back in
//! order, checking that each request matches what was recorded, so a
//! pipeline re-run against it reproduces the original result exactly.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::entailment::{Entailment, EntailmentVerdict};
use crate::error::{Error, Result};
use crate::generator::{AnswerSample, GenerationRequest, Generator, Question};
use crate::retriever::{Retriever, ScoredDocument};
use crate::router::RetrievalDecision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Sample {
        step: usize,
        request: GenerationRequest,
        samples: Vec<AnswerSample>,
        latency_ms: u64,
    },
    Entail {
        question: String,
        premise: String,
        hypothesis: String,
        verdict: EntailmentVerdict,
        latency_ms: u64,
    },
    Retrieve {
        step: usize,
        query: String,
        k: usize,
        results: Vec<ScoredDocument>,
        latency_ms: u64,
    },
    Greedy {
        step: usize,
        question_id: String,
        context_documents: Vec<String>,
        answer: AnswerSample,
        latency_ms: u64,
    },
    Entropy {
        step: usize,
        semantic_entropy: f64,
        predictive_entropy: f64,
        num_clusters: usize,
    },
    Decision {
        decision: RetrievalDecision,
    },
}

impl TraceEvent {
    pub fn latency_ms(&self) -> u64 {
        match self {
            TraceEvent::Sample { latency_ms, .. }
            | TraceEvent::Entail { latency_ms, .. }
            | TraceEvent::Retrieve { latency_ms, .. }
            | TraceEvent::Greedy { latency_ms, .. } => *latency_ms,
            TraceEvent::Entropy { .. } | TraceEvent::Decision { .. } => 0,
        }
    }

    pub fn is_backend_call(&self) -> bool {
        !matches!(self, TraceEvent::Entropy { .. } | TraceEvent::Decision { .. })
    }
}

/// Serves recorded backend responses in order.
pub struct ReplayBackends {
    samples: Cursor<(GenerationRequest, Vec<AnswerSample>)>,
    entails: Cursor<((String, String, String), EntailmentVerdict)>,
    retrievals: Cursor<((String, usize), Vec<ScoredDocument>)>,
    greedy: Cursor<((String, Vec<String>), AnswerSample)>,
}

struct Cursor<T> {
    what: &'static str,
    items: Vec<T>,
    next: Mutex<usize>,
}

impl<T> Cursor<T> {
    fn new(what: &'static str, items: Vec<T>) -> Self {
        Cursor {
            what,
            items,
            next: Mutex::new(0),
        }
    }

    fn take(&self) -> Result<&T> {
        let mut next = self.next.lock().expect("replay cursor poisoned");
        let item = self.items.get(*next).ok_or_else(|| {
            Error::ReplayMismatch(format!("more {} calls than recorded ({})", self.what, self.items.len()))
        })?;
        *next += 1;
        Ok(item)
    }

    fn remaining(&self) -> usize {
        self.items.len() - *self.next.lock().expect("replay cursor poisoned")
    }
}

impl ReplayBackends {
    pub fn new(trace: &[TraceEvent]) -> Self {
        let mut samples = Vec::new();
        let mut entails = Vec::new();
        let mut retrievals = Vec::new();
        let mut greedy = Vec::new();
        for ev in trace {
            match ev {
                TraceEvent::Sample { request, samples: s, .. } => samples.push((request.clone(), s.clone())),
                TraceEvent::Entail {
                    question,
                    premise,
                    hypothesis,
                    verdict,
                    ..
                } => entails.push(((question.clone(), premise.clone(), hypothesis.clone()), *verdict)),
                TraceEvent::Retrieve { query, k, results, .. } => {
                    retrievals.push(((query.clone(), *k), results.clone()))
                }
                TraceEvent::Greedy {
                    question_id,
                    context_documents,
                    answer,
                    ..
                } => greedy.push(((question_id.clone(), context_documents.clone()), answer.clone())),
                TraceEvent::Entropy { .. } | TraceEvent::Decision { .. } => {}
            }
        }
        ReplayBackends {
            samples: Cursor::new("sample", samples),
            entails: Cursor::new("entailment", entails),
            retrievals: Cursor::new("retrieval", retrievals),
            greedy: Cursor::new("greedy", greedy),
        }
    }

    /// True once every recorded call has been served.
    pub fn exhausted(&self) -> bool {
        self.samples.remaining() == 0
            && self.entails.remaining() == 0
            && self.retrievals.remaining() == 0
            && self.greedy.remaining() == 0
    }
}

fn mismatch(what: &str) -> Error {
    Error::ReplayMismatch(format!("{what} request differs from the recorded one"))
}

impl Generator for ReplayBackends {
    fn sample_answers(&self, req: &GenerationRequest) -> Result<Vec<AnswerSample>> {
        let (recorded, out) = self.samples.take()?;
        if recorded != req {
            return Err(mismatch("sample"));
        }
        Ok(out.clone())
    }

    fn greedy_answer(&self, question: &Question, context_documents: &[String]) -> Result<AnswerSample> {
        let ((qid, docs), out) = self.greedy.take()?;
        if *qid != question.id || docs.as_slice() != context_documents {
            return Err(mismatch("greedy"));
        }
        Ok(out.clone())
    }
}

impl Entailment for ReplayBackends {
    fn entails(&self, q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
        let ((rq, rp, rh), v) = self.entails.take()?;
        if rq != q || rp != p || rh != h {
            return Err(mismatch("entailment"));
        }
        Ok(*v)
    }
}

impl Retriever for ReplayBackends {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDocument>> {
        let ((rq, rk), out) = self.retrievals.take()?;
        if rq != query || *rk != k {
            return Err(mismatch("retrieval"));
        }
        Ok(out.clone())
    }
}
