//! The adaptive answering pipeline.
//!
//! For each question: sample closed-book answers, estimate semantic entropy,
//! route on it, then answer without retrieval, after one retrieval round, or
//! through an iterative retrieve-and-redraft loop. Every backend call is
//! traced.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::entailment::{bidirectionally_equivalent, CachedEntailment, Entailment, EntailmentVerdict};
use crate::entropy::{self, EntropyReport};
use crate::error::{Error, Result};
use crate::generator::{AnswerSample, GenerationRequest, Generator, Question, DEFAULT_NUM_SAMPLES};
use crate::retriever::{Document, Retriever, ScoredDocument, DEFAULT_TOP_K};
use crate::router::{decide, RetrievalDecision, RetrievalMode, Thresholds};
use crate::seed::derive_seed;
use crate::trace::{ReplayBackends, TraceEvent};

pub const DEFAULT_MAX_STEPS: usize = 3;

/// Which uncertainty value drives routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    Semantic,
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Route on the trigger entropy through both thresholds.
    Adaptive,
    /// Retrieve once whenever the trigger entropy reaches `tau_low`.
    Binary,
    /// Always use one mode and skip the closed-book uncertainty estimate.
    Fixed(RetrievalMode),
}

/// Simulated per-call costs, for reproducible timing in offline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatedLatency {
    pub per_sample_ms: u64,
    pub greedy_ms: u64,
    pub entailment_ms: u64,
    pub retrieval_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Wall,
    Simulated(SimulatedLatency),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub num_samples: usize,
    pub temperature: f64,
    pub length_normalized: bool,
    pub thresholds: Thresholds,
    pub max_steps: usize,
    pub top_k: usize,
    pub seed: u64,
    pub trigger: Trigger,
    pub routing: Routing,
    pub timing: Timing,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_samples: DEFAULT_NUM_SAMPLES,
            temperature: 1.0,
            length_normalized: false,
            thresholds: Thresholds {
                tau_low: 0.4,
                tau_high: 0.9,
            },
            max_steps: DEFAULT_MAX_STEPS,
            top_k: DEFAULT_TOP_K,
            seed: 0,
            trigger: Trigger::Semantic,
            routing: Routing::Adaptive,
            timing: Timing::Wall,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.num_samples == 0 {
            return Err(Error::Config("sampling.n must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config("sampling.temperature must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("multistep.max_steps must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("retriever.k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub question_id: String,
    pub answer: String,
    pub mode: RetrievalMode,
    /// Absent when routing is fixed.
    pub decision: Option<RetrievalDecision>,
    /// Closed-book uncertainty estimate; absent when routing is fixed.
    pub entropy_report: Option<EntropyReport>,
    pub retrieval_steps: usize,
    /// Document ids returned by each retrieval round.
    pub retrieved_doc_ids: Vec<Vec<String>>,
    pub wall_time_ms: u64,
    pub trace: Vec<TraceEvent>,
}

/// A failed question with everything traced up to the failure.
#[derive(Debug)]
pub struct PipelineFailure {
    pub question_id: String,
    pub error: Error,
    pub trace: Vec<TraceEvent>,
}

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "question {}: {}", self.question_id, self.error)
    }
}

impl std::error::Error for PipelineFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type PipelineOutcome = std::result::Result<PipelineResult, PipelineFailure>;

pub struct Pipeline<'a> {
    generator: &'a dyn Generator,
    entailment: &'a dyn Entailment,
    retriever: Option<&'a dyn Retriever>,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        generator: &'a dyn Generator,
        entailment: &'a dyn Entailment,
        retriever: Option<&'a dyn Retriever>,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            generator,
            entailment,
            retriever,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Same backends, different configuration.
    pub fn with_config(&self, config: PipelineConfig) -> Result<Pipeline<'a>> {
        Pipeline::new(self.generator, self.entailment, self.retriever, config)
    }

    pub fn answer_question(&self, question: &Question) -> PipelineOutcome {
        let run = Run::new(self, question);
        let result = run.answer(None);
        run.finish(result)
    }

    /// Runs the iterative loop directly, regardless of the routed mode. The
    /// closed-book estimate is still computed and reported.
    pub fn multi_step_answer(&self, question: &Question) -> PipelineOutcome {
        let run = Run::new(self, question);
        let result = run.answer(Some(RetrievalMode::MultiStep));
        run.finish(result)
    }

    /// Answers every question with up to `parallelism` workers. Results come
    /// back in input order.
    pub fn answer_all(&self, questions: &[Question], parallelism: usize) -> Vec<PipelineOutcome> {
        let workers = parallelism.clamp(1, questions.len().max(1));
        if workers == 1 {
            return questions.iter().map(|q| self.answer_question(q)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<PipelineOutcome>>> =
            Mutex::new((0..questions.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else { break };
                    let out = self.answer_question(q);
                    slots.lock().expect("result slots poisoned")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots poisoned")
            .into_iter()
            .map(|o| o.expect("every question answered"))
            .collect()
    }
}

/// State for answering one question.
struct Run<'p, 'a> {
    pipeline: &'p Pipeline<'a>,
    question: &'p Question,
    events: Mutex<Vec<TraceEvent>>,
    simulated_ms: AtomicU64,
    started: Instant,
}

struct Answered {
    answer: AnswerSample,
    mode: RetrievalMode,
    decision: Option<RetrievalDecision>,
    report: Option<EntropyReport>,
    steps: usize,
    doc_ids: Vec<Vec<String>>,
}

impl<'p, 'a> Run<'p, 'a> {
    fn new(pipeline: &'p Pipeline<'a>, question: &'p Question) -> Self {
        Run {
            pipeline,
            question,
            events: Mutex::new(Vec::new()),
            simulated_ms: AtomicU64::new(0),
            started: Instant::now(),
        }
    }

    fn cfg(&self) -> &PipelineConfig {
        &self.pipeline.config
    }

    fn push(&self, ev: TraceEvent) {
        self.events.lock().expect("trace poisoned").push(ev);
    }

    /// Runs `call`, returning its output and the latency to record.
    fn timed<T>(&self, simulated: u64, call: impl FnOnce() -> Result<T>) -> Result<(T, u64)> {
        let t0 = Instant::now();
        let out = call()?;
        let latency = match self.cfg().timing {
            Timing::Wall => t0.elapsed().as_millis() as u64,
            Timing::Simulated(_) => {
                self.simulated_ms.fetch_add(simulated, Ordering::SeqCst);
                simulated
            }
        };
        Ok((out, latency))
    }

    fn latencies(&self) -> SimulatedLatency {
        match self.cfg().timing {
            Timing::Simulated(l) => l,
            Timing::Wall => SimulatedLatency::default(),
        }
    }

    fn finish(self, result: Result<Answered>) -> PipelineOutcome {
        let trace = self.events.into_inner().expect("trace poisoned");
        let a = match result {
            Ok(a) => a,
            Err(error) => {
                return Err(PipelineFailure {
                    question_id: self.question.id.clone(),
                    error,
                    trace,
                })
            }
        };
        let wall_time_ms = match self.pipeline.config.timing {
            Timing::Wall => self.started.elapsed().as_millis() as u64,
            Timing::Simulated(_) => self.simulated_ms.load(Ordering::SeqCst),
        };
        Ok(PipelineResult {
            question_id: self.question.id.clone(),
            answer: a.answer.text,
            mode: a.mode,
            decision: a.decision,
            entropy_report: a.report,
            retrieval_steps: a.steps,
            retrieved_doc_ids: a.doc_ids,
            wall_time_ms,
            trace,
        })
    }

    fn trigger_value(&self, report: &EntropyReport) -> f64 {
        match self.cfg().trigger {
            Trigger::Semantic => report.semantic_entropy,
            Trigger::Predictive => report.predictive_entropy,
        }
    }

    fn answer(&self, force: Option<RetrievalMode>) -> Result<Answered> {
        let (mode, decision, report) = match (force, self.cfg().routing) {
            (None, Routing::Fixed(mode)) => (mode, None, None),
            (force, routing) => {
                let report = self.assess(0, &[])?;
                let mut decision = decide(self.trigger_value(&report), self.cfg().thresholds)?;
                if routing == Routing::Binary && decision.mode == RetrievalMode::MultiStep {
                    decision.mode = RetrievalMode::SingleStep;
                }
                self.push(TraceEvent::Decision { decision });
                (force.unwrap_or(decision.mode), Some(decision), Some(report))
            }
        };
        let (answer, steps, doc_ids) = match mode {
            RetrievalMode::NoRetrieval => (self.greedy(0, &[])?, 0, Vec::new()),
            RetrievalMode::SingleStep => {
                let results = self.retrieve(1, &self.question.text)?;
                let ids = results.iter().map(|r| r.document.doc_id.clone()).collect();
                let ctx: Vec<String> = results.iter().map(|r| r.document.context_text()).collect();
                (self.greedy(1, &ctx)?, 1, vec![ids])
            }
            RetrievalMode::MultiStep => self.multi_step()?,
        };
        Ok(Answered {
            answer,
            mode,
            decision,
            report,
            steps,
            doc_ids,
        })
    }

    /// Retrieve with the question (plus the previous draft after the first
    /// round), redraft over all documents gathered so far, re-estimate
    /// uncertainty with that context, and stop once it falls below
    /// `tau_low` or after `max_steps` rounds.
    fn multi_step(&self) -> Result<(AnswerSample, usize, Vec<Vec<String>>)> {
        let mut gathered: Vec<Document> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut doc_ids = Vec::new();
        let mut draft: Option<AnswerSample> = None;
        let mut steps = 0;
        for step in 1..=self.cfg().max_steps {
            let query = match &draft {
                None => self.question.text.clone(),
                Some(d) => format!("{} {}", self.question.text, d.text),
            };
            let results = self.retrieve(step, &query)?;
            doc_ids.push(results.iter().map(|r| r.document.doc_id.clone()).collect());
            for r in results {
                if seen.insert(r.document.doc_id.clone()) {
                    gathered.push(r.document);
                }
            }
            let ctx: Vec<String> = gathered.iter().map(Document::context_text).collect();
            draft = Some(self.greedy(step, &ctx)?);
            steps = step;
            let report = self.assess(step, &ctx)?;
            if self.trigger_value(&report) < self.cfg().thresholds.tau_low {
                break;
            }
        }
        Ok((draft.expect("max_steps >= 1"), steps, doc_ids))
    }

    fn assess(&self, step: usize, ctx: &[String]) -> Result<EntropyReport> {
        let cfg = self.cfg();
        let request = GenerationRequest {
            question: self.question.clone(),
            context_documents: ctx.to_vec(),
            num_samples: cfg.num_samples,
            temperature: cfg.temperature,
            seed: derive_seed(cfg.seed, &[&self.question.id, "sample", &step.to_string()]),
        };
        let per_call = self.latencies().per_sample_ms * cfg.num_samples as u64;
        let (samples, latency_ms) = self.timed(per_call, || self.pipeline.generator.sample_answers(&request))?;
        if samples.len() != cfg.num_samples {
            return Err(Error::MalformedBackendResponse(format!(
                "requested {} samples, got {}",
                cfg.num_samples,
                samples.len()
            )));
        }
        self.push(TraceEvent::Sample {
            step,
            request,
            samples: samples.clone(),
            latency_ms,
        });

        let recorder = RecordingEntailment { run: self };
        let cached = CachedEntailment::new(&recorder);
        let report = entropy::estimate(&self.question.text, &samples, cfg.length_normalized, |q, a, b| {
            bidirectionally_equivalent(&cached, q, a, b)
        })?;
        self.push(TraceEvent::Entropy {
            step,
            semantic_entropy: report.semantic_entropy,
            predictive_entropy: report.predictive_entropy,
            num_clusters: report.clustering.len(),
        });
        Ok(report)
    }

    fn greedy(&self, step: usize, ctx: &[String]) -> Result<AnswerSample> {
        let (answer, latency_ms) = self.timed(self.latencies().greedy_ms, || {
            self.pipeline.generator.greedy_answer(self.question, ctx)
        })?;
        self.push(TraceEvent::Greedy {
            step,
            question_id: self.question.id.clone(),
            context_documents: ctx.to_vec(),
            answer: answer.clone(),
            latency_ms,
        });
        Ok(answer)
    }

    fn retrieve(&self, step: usize, query: &str) -> Result<Vec<ScoredDocument>> {
        let retriever = self.pipeline.retriever.ok_or(Error::IndexNotBuilt)?;
        let k = self.cfg().top_k;
        let (results, latency_ms) = self.timed(self.latencies().retrieval_ms, || retriever.search(query, k))?;
        self.push(TraceEvent::Retrieve {
            step,
            query: query.to_owned(),
            k,
            results: results.clone(),
            latency_ms,
        });
        Ok(results)
    }
}

/// Forwards to the pipeline's entailment backend and traces each call.
struct RecordingEntailment<'r, 'p, 'a> {
    run: &'r Run<'p, 'a>,
}

impl Entailment for RecordingEntailment<'_, '_, '_> {
    fn entails(&self, q: &str, p: &str, h: &str) -> Result<EntailmentVerdict> {
        let run = self.run;
        let (verdict, latency_ms) = run.timed(run.latencies().entailment_ms, || {
            run.pipeline.entailment.entails(q, p, h)
        })?;
        run.push(TraceEvent::Entail {
            question: q.to_owned(),
            premise: p.to_owned(),
            hypothesis: h.to_owned(),
            verdict,
            latency_ms,
        });
        Ok(verdict)
    }
}

/// Re-runs a question against its recorded trace.
pub fn replay(question: &Question, trace: &[TraceEvent], config: PipelineConfig) -> Result<PipelineResult> {
    let backends = ReplayBackends::new(trace);
    let pipeline = Pipeline::new(&backends, &backends, Some(&backends), config)?;
    let result = pipeline.answer_question(question).map_err(|f| f.error)?;
    if !backends.exhausted() {
        return Err(Error::ReplayMismatch("replay finished with unused recorded calls".into()));
    }
    Ok(result)
}
