//! QA metrics, evaluation runs and the predictive-vs-semantic ablation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Question;
use crate::orchestrator::{Pipeline, PipelineOutcome, Routing, Trigger};
use crate::router::{CalibrationRecord, RetrievalMode, Thresholds};
use crate::text::{answer_tokens, contains_run, normalize_answer};
use crate::trace::TraceEvent;

fn require_gold(gold: &[String]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::NoGoldAnswers);
    }
    Ok(())
}

/// 1 when the normalized prediction equals some normalized gold answer.
pub fn exact_match(prediction: &str, gold: &[String]) -> Result<u8> {
    require_gold(gold)?;
    let p = normalize_answer(prediction);
    Ok(u8::from(gold.iter().any(|g| normalize_answer(g) == p)))
}

/// Best token-level F1 against any gold answer.
pub fn f1(prediction: &str, gold: &[String]) -> Result<f64> {
    require_gold(gold)?;
    let p = answer_tokens(prediction);
    Ok(gold
        .iter()
        .map(|g| token_f1(&p, &answer_tokens(g)))
        .fold(0.0, f64::max))
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1 when some normalized gold answer occurs as a contiguous token run in the
/// normalized prediction.
pub fn accuracy(prediction: &str, gold: &[String]) -> Result<u8> {
    require_gold(gold)?;
    let p = answer_tokens(prediction);
    Ok(u8::from(gold.iter().any(|g| contains_run(&p, &answer_tokens(g)))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub em: u8,
    pub f1: f64,
    pub acc: u8,
}

pub fn score(prediction: &str, gold: &[String]) -> Result<Scores> {
    Ok(Scores {
        em: exact_match(prediction, gold)?,
        f1: f1(prediction, gold)?,
        acc: accuracy(prediction, gold)?,
    })
}

#[derive(Deserialize)]
struct DatasetLine {
    id: String,
    question: String,
    answers: Vec<String>,
}

/// Parses dataset JSONL: one `{"id", "question", "answers"}` object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRecord { line: line_no, reason };
        let rec: DatasetLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if rec.question.trim().is_empty() {
            return Err(bad("empty question".into()));
        }
        if rec.answers.is_empty() {
            return Err(bad("no gold answers".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(bad(format!("duplicate id {:?}", rec.id)));
        }
        out.push(Question::new(rec.id, rec.question).with_gold(rec.answers));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Question>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.to_path_buf()),
        _ => Error::io(format!("reading {}", path.display()), e),
    })?;
    parse_dataset(&text)
}

/// Scored outcome of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub em: u8,
    pub f1: f64,
    pub acc: u8,
    pub retrieval_steps: usize,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RetrievalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictive_entropy: Option<f64>,
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    /// Scores a pipeline outcome. A failed question scores 0 and keeps the
    /// error message.
    pub fn from_outcome(question: &Question, outcome: &PipelineOutcome) -> Result<Self> {
        require_gold(&question.gold_answers)?;
        let gold = question.gold_answers.clone();
        Ok(match outcome {
            Ok(r) => {
                let s = score(&r.answer, &gold)?;
                let report = r.entropy_report.as_ref();
                EvalRecord {
                    question_id: question.id.clone(),
                    prediction: r.answer.clone(),
                    gold_answers: gold,
                    em: s.em,
                    f1: s.f1,
                    acc: s.acc,
                    retrieval_steps: r.retrieval_steps,
                    wall_time_ms: r.wall_time_ms,
                    mode: Some(r.mode),
                    semantic_entropy: report.map(|e| e.semantic_entropy),
                    predictive_entropy: report.map(|e| e.predictive_entropy),
                    failed: false,
                    error: None,
                }
            }
            Err(f) => EvalRecord {
                question_id: question.id.clone(),
                prediction: String::new(),
                gold_answers: gold,
                em: 0,
                f1: 0.0,
                acc: 0,
                retrieval_steps: 0,
                wall_time_ms: 0,
                mode: None,
                semantic_entropy: None,
                predictive_entropy: None,
                failed: true,
                error: Some(f.error.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingCounts {
    pub no_retrieval: usize,
    pub single_step: usize,
    pub multi_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub dataset: String,
    pub num_questions: usize,
    pub num_failed: usize,
    /// Percentages.
    pub em: f64,
    pub f1: f64,
    pub acc: f64,
    pub mean_retrieval_steps: f64,
    pub mean_wall_time_ms: f64,
    /// Mean wall time relative to a single-step baseline run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_time: Option<f64>,
    pub routing: RoutingCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_questions: Vec<String>,
}

impl EvalReport {
    /// Aggregates per-record scores. Failed records count as zeros.
    pub fn aggregate(dataset: &str, records: &[EvalRecord], baseline: Option<&EvalReport>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let mut routing = RoutingCounts::default();
        for r in records {
            match r.mode {
                Some(RetrievalMode::NoRetrieval) => routing.no_retrieval += 1,
                Some(RetrievalMode::SingleStep) => routing.single_step += 1,
                Some(RetrievalMode::MultiStep) => routing.multi_step += 1,
                None => {}
            }
        }
        let mean_wall_time_ms = mean(&|r| r.wall_time_ms as f64);
        let relative_time = baseline.and_then(|b| {
            (b.mean_wall_time_ms > 0.0 && mean_wall_time_ms > 0.0).then(|| mean_wall_time_ms / b.mean_wall_time_ms)
        });
        let failed_questions: Vec<String> = records
            .iter()
            .filter(|r| r.failed)
            .map(|r| r.question_id.clone())
            .collect();
        Ok(EvalReport {
            dataset: dataset.to_owned(),
            num_questions: records.len(),
            num_failed: failed_questions.len(),
            em: 100.0 * mean(&|r| f64::from(r.em)),
            f1: 100.0 * mean(&|r| r.f1),
            acc: 100.0 * mean(&|r| f64::from(r.acc)),
            mean_retrieval_steps: mean(&|r| r.retrieval_steps as f64),
            mean_wall_time_ms,
            relative_time,
            routing,
            failed_questions,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::MalformedRecord {
            line: e.inner().line(),
            reason: format!("{}: {}", e.path(), e.inner()),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut rows: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.clone()),
            ("questions", self.num_questions.to_string()),
            ("failed", self.num_failed.to_string()),
            ("EM", format!("{:.2}", self.em)),
            ("F1", format!("{:.2}", self.f1)),
            ("Acc", format!("{:.2}", self.acc)),
            ("mean steps", format!("{:.3}", self.mean_retrieval_steps)),
            ("mean time (ms)", format!("{:.1}", self.mean_wall_time_ms)),
        ];
        rows.push((
            "relative time",
            self.relative_time.map_or_else(|| "-".into(), |t| format!("{t:.3}")),
        ));
        rows.push((
            "routing (none/single/multi)",
            format!(
                "{}/{}/{}",
                self.routing.no_retrieval, self.routing.single_step, self.routing.multi_step
            ),
        ));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

/// Everything produced by one evaluation run.
#[derive(Debug)]
pub struct EvalRun {
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
    pub outcomes: Vec<PipelineOutcome>,
}

/// Answers and scores every question. Pipeline failures are recorded per
/// question instead of aborting the run.
pub fn evaluate(
    dataset: &str,
    questions: &[Question],
    pipeline: &Pipeline<'_>,
    parallelism: usize,
    baseline: Option<&EvalReport>,
) -> Result<EvalRun> {
    if questions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outcomes = pipeline.answer_all(questions, parallelism);
    let records = questions
        .iter()
        .zip(&outcomes)
        .map(|(q, o)| EvalRecord::from_outcome(q, o))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::aggregate(dataset, &records, baseline)?;
    Ok(EvalRun {
        report,
        records,
        outcomes,
    })
}

/// Reads the dataset at `path` and evaluates it; the report is named after
/// the file stem.
pub fn run_eval(
    path: &Path,
    pipeline: &Pipeline<'_>,
    parallelism: usize,
    baseline: Option<&EvalReport>,
) -> Result<EvalRun> {
    let questions = read_dataset(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    evaluate(&name, &questions, pipeline, parallelism, baseline)
}

pub fn write_records<W: Write>(mut w: W, records: &[EvalRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io("writing records", e))?;
    }
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<EvalRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// One line of the trace JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trace: Vec<TraceEvent>,
}

pub fn write_traces<W: Write>(mut w: W, outcomes: &[PipelineOutcome]) -> Result<()> {
    for o in outcomes {
        let line = match o {
            Ok(r) => TraceLine {
                question_id: r.question_id.clone(),
                error: None,
                trace: r.trace.clone(),
            },
            Err(f) => TraceLine {
                question_id: f.question_id.clone(),
                error: Some(f.error.to_string()),
                trace: f.trace.clone(),
            },
        };
        let s = serde_json::to_string(&line).expect("trace serializes");
        writeln!(w, "{s}").map_err(|e| Error::io("writing traces", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub acc: f64,
    pub em: f64,
    pub f1: f64,
    pub mean_steps: f64,
    /// Questions that retrieved at least once.
    pub retrievals: usize,
    pub num_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, trigger: Trigger, tau: f64) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.trigger == Some(trigger) && r.tau == Some(tau))
    }

    pub fn render(&self) -> String {
        let header = ["method", "Acc", "EM", "F1", "steps", "retrieved", "failed"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.2}", r.acc),
                    format!("{:.2}", r.em),
                    format!("{:.2}", r.f1),
                    format!("{:.3}", r.mean_steps),
                    r.retrievals.to_string(),
                    r.num_failed.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        out
    }
}

fn ablation_row(label: String, trigger: Option<Trigger>, tau: Option<f64>, run: &EvalRun) -> AblationRow {
    AblationRow {
        label,
        trigger,
        tau,
        acc: run.report.acc,
        em: run.report.em,
        f1: run.report.f1,
        mean_steps: run.report.mean_retrieval_steps,
        retrievals: run.records.iter().filter(|r| r.retrieval_steps > 0).count(),
        num_failed: run.report.num_failed,
    }
}

/// Compares fixed baselines with binary retrieve-or-not routing triggered by
/// predictive entropy (once per threshold) and by semantic entropy.
pub fn ablate(
    dataset: &str,
    questions: &[Question],
    pipeline: &Pipeline<'_>,
    tau_se: f64,
    tau_pe: &[f64],
    parallelism: usize,
) -> Result<AblationTable> {
    if tau_pe.is_empty() {
        return Err(Error::InvalidRequest("at least one predictive-entropy threshold is required".into()));
    }
    if questions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base = pipeline.config().clone();
    let arm = |trigger: Trigger, routing: Routing, thresholds: Thresholds| -> Result<EvalRun> {
        let mut cfg = base.clone();
        cfg.trigger = trigger;
        cfg.routing = routing;
        cfg.thresholds = thresholds;
        evaluate(dataset, questions, &pipeline.with_config(cfg)?, parallelism, None)
    };
    let mut rows = Vec::new();
    for (label, mode) in [
        ("No retrieval", RetrievalMode::NoRetrieval),
        ("Single-step retrieval", RetrievalMode::SingleStep),
    ] {
        let run = arm(base.trigger, Routing::Fixed(mode), base.thresholds)?;
        rows.push(ablation_row(label.into(), None, None, &run));
    }
    for &tau in tau_pe {
        let run = arm(Trigger::Predictive, Routing::Binary, Thresholds::binary(tau)?)?;
        rows.push(ablation_row(
            format!("Predictive entropy (tau={tau})"),
            Some(Trigger::Predictive),
            Some(tau),
            &run,
        ));
    }
    let run = arm(Trigger::Semantic, Routing::Binary, Thresholds::binary(tau_se)?)?;
    rows.push(ablation_row(
        format!("Semantic entropy (tau={tau_se})"),
        Some(Trigger::Semantic),
        Some(tau_se),
        &run,
    ));
    Ok(AblationTable {
        dataset: dataset.to_owned(),
        rows,
    })
}

/// Runs every question under all three retrieval modes and records the
/// closed-book trigger entropy with per-mode correctness (containment
/// accuracy) and F1, ready for threshold calibration.
pub fn collect_calibration_records(
    questions: &[Question],
    pipeline: &Pipeline<'_>,
    parallelism: usize,
) -> Result<Vec<CalibrationRecord>> {
    if questions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base = pipeline.config().clone();
    let fixed = |mode: RetrievalMode| -> Result<Vec<PipelineOutcome>> {
        let mut cfg = base.clone();
        cfg.routing = Routing::Fixed(mode);
        Ok(pipeline.with_config(cfg)?.answer_all(questions, parallelism))
    };
    let none = fixed(RetrievalMode::NoRetrieval)?;
    let single = fixed(RetrievalMode::SingleStep)?;
    let mut adaptive = base.clone();
    adaptive.routing = Routing::Adaptive;
    let adaptive = pipeline.with_config(adaptive)?;
    let mut out = Vec::with_capacity(questions.len());
    for ((q, n), s) in questions.iter().zip(none).zip(single) {
        let multi = adaptive.multi_step_answer(q).map_err(|f| f.error)?;
        let report = multi.entropy_report.as_ref().expect("multi-step run always assesses");
        let entropy = match base.trigger {
            Trigger::Semantic => report.semantic_entropy,
            Trigger::Predictive => report.predictive_entropy,
        };
        let n = n.map_err(|f| f.error)?;
        let s = s.map_err(|f| f.error)?;
        let gold = &q.gold_answers;
        let (sn, ss, sm) = (score(&n.answer, gold)?, score(&s.answer, gold)?, score(&multi.answer, gold)?);
        out.push(CalibrationRecord {
            question_id: Some(q.id.clone()),
            entropy,
            correct_without_retrieval: sn.acc == 1,
            correct_with_single: ss.acc == 1,
            correct_with_multi: sm.acc == 1,
            multi_steps: Some(multi.retrieval_steps as f64),
            f1_without_retrieval: Some(sn.f1),
            f1_with_single: Some(ss.f1),
            f1_with_multi: Some(sm.f1),
        });
    }
    Ok(out)
}
