//! Entropy-thresholded routing between no retrieval, one retrieval round and
//! iterative retrieval, plus threshold calibration by cross-validation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores closer than this count as tied during calibration.
const SCORE_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    NoRetrieval,
    SingleStep,
    MultiStep,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [
        RetrievalMode::NoRetrieval,
        RetrievalMode::SingleStep,
        RetrievalMode::MultiStep,
    ];
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::NoRetrieval => "no_retrieval",
            RetrievalMode::SingleStep => "single_step",
            RetrievalMode::MultiStep => "multi_step",
        })
    }
}

/// Two entropy breakpoints in nats. Equal values give binary
/// retrieve / don't-retrieve routing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Thresholds {
    pub fn new(tau_low: f64, tau_high: f64) -> Result<Self> {
        let t = Thresholds { tau_low, tau_high };
        t.validate()?;
        Ok(t)
    }

    /// Binary routing at a single threshold.
    pub fn binary(tau: f64) -> Result<Self> {
        Self::new(tau, tau)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_low", self.tau_low), ("tau_high", self.tau_high)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NegativeThreshold(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        if self.tau_low > self.tau_high {
            return Err(Error::InvalidThresholds {
                tau_low: self.tau_low,
                tau_high: self.tau_high,
            });
        }
        Ok(())
    }

    pub fn mode_for(&self, entropy: f64) -> RetrievalMode {
        if entropy < self.tau_low {
            RetrievalMode::NoRetrieval
        } else if entropy < self.tau_high {
            RetrievalMode::SingleStep
        } else {
            RetrievalMode::MultiStep
        }
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.tau_low, self.tau_high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalDecision {
    pub mode: RetrievalMode,
    pub entropy: f64,
    pub thresholds: Thresholds,
}

/// Routes an entropy value. Boundaries go to the higher-retrieval mode:
/// `entropy == tau_low` is single-step, `entropy == tau_high` multi-step.
pub fn decide(entropy: f64, thresholds: Thresholds) -> Result<RetrievalDecision> {
    thresholds.validate()?;
    if !(entropy.is_finite() && entropy >= 0.0) {
        return Err(Error::InvalidRequest(format!(
            "entropy must be a finite non-negative number, got {entropy}"
        )));
    }
    Ok(RetrievalDecision {
        mode: thresholds.mode_for(entropy),
        entropy,
        thresholds,
    })
}

/// Outcome of one question under each retrieval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub entropy: f64,
    pub correct_without_retrieval: bool,
    pub correct_with_single: bool,
    pub correct_with_multi: bool,
    /// Retrieval rounds the multi-step run used, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_steps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_without_retrieval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_with_single: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_with_multi: Option<f64>,
}

impl CalibrationRecord {
    pub fn new(entropy: f64, without: bool, single: bool, multi: bool) -> Self {
        CalibrationRecord {
            question_id: None,
            entropy,
            correct_without_retrieval: without,
            correct_with_single: single,
            correct_with_multi: multi,
            multi_steps: None,
            f1_without_retrieval: None,
            f1_with_single: None,
            f1_with_multi: None,
        }
    }

    pub fn correct(&self, mode: RetrievalMode) -> bool {
        match mode {
            RetrievalMode::NoRetrieval => self.correct_without_retrieval,
            RetrievalMode::SingleStep => self.correct_with_single,
            RetrievalMode::MultiStep => self.correct_with_multi,
        }
    }

    fn score(&self, mode: RetrievalMode, objective: Objective) -> Result<f64> {
        match objective {
            Objective::Accuracy => Ok(f64::from(u8::from(self.correct(mode)))),
            Objective::F1 => match mode {
                RetrievalMode::NoRetrieval => self.f1_without_retrieval,
                RetrievalMode::SingleStep => self.f1_with_single,
                RetrievalMode::MultiStep => self.f1_with_multi,
            }
            .ok_or_else(|| Error::InvalidRequest(format!("record lacks an F1 value for {mode}"))),
        }
    }

    fn steps(&self, mode: RetrievalMode, default_multi_steps: f64) -> f64 {
        match mode {
            RetrievalMode::NoRetrieval => 0.0,
            RetrievalMode::SingleStep => 1.0,
            RetrievalMode::MultiStep => self.multi_steps.unwrap_or(default_multi_steps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Accuracy,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub k_folds: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Step cost of a multi-step answer for records without `multi_steps`.
    pub default_multi_steps: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            k_folds: 5,
            seed: 0,
            objective: Objective::Accuracy,
            default_multi_steps: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub thresholds: Thresholds,
    /// Mean over folds of the held-out objective.
    pub cv_score: f64,
    /// Mean retrieval steps over all records.
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub best: GridScore,
    /// Every grid point, in grid order.
    pub scores: Vec<GridScore>,
}

impl Calibration {
    pub fn thresholds(&self) -> Thresholds {
        self.best.thresholds
    }
}

/// Every pair `(lo, hi)` with `lo <= hi` drawn from `0.0, 0.1, ..., 2.0`.
pub fn default_grid() -> Vec<Thresholds> {
    range_grid(0.0, 2.0, 0.1).expect("default grid is valid")
}

fn range_grid(start: f64, stop: f64, step: f64) -> Result<Vec<Thresholds>> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || start < 0.0 || stop < start {
        return Err(Error::InvalidGrid(format!(
            "range {start}:{stop}:{step} needs 0 <= start <= stop and step > 0"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 10_000 {
        return Err(Error::InvalidGrid(format!("range {start}:{stop}:{step} is too fine")));
    }
    // values are computed as start + i*step then rounded to 12 decimals so
    // that e.g. 0.1 * 3 lands on the literal 0.3
    let values: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    let mut grid = Vec::new();
    for (i, &lo) in values.iter().enumerate() {
        for &hi in &values[i..] {
            grid.push(Thresholds { tau_low: lo, tau_high: hi });
        }
    }
    Ok(grid)
}

/// Parses a grid description: `default`, a range `start:stop:step`
/// (all ordered pairs of its values), or explicit pairs `lo,hi;lo,hi`.
pub fn parse_grid(text: &str) -> Result<Vec<Thresholds>> {
    let text = text.trim();
    if text == "default" {
        return Ok(default_grid());
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidGrid(format!("not a number: {s:?}")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidGrid(format!("expected start:stop:step, got {text:?}")));
        }
        return range_grid(num(parts[0])?, num(parts[1])?, num(parts[2])?);
    }
    let mut grid = Vec::new();
    for pair in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = pair
            .split_once(',')
            .ok_or_else(|| Error::InvalidGrid(format!("expected lo,hi, got {pair:?}")))?;
        let t = Thresholds {
            tau_low: num(lo)?,
            tau_high: num(hi)?,
        };
        t.validate().map_err(|e| Error::InvalidGrid(e.to_string()))?;
        grid.push(t);
    }
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    Ok(grid)
}

fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold[idx] = pos % k;
    }
    fold
}

fn check_records(records: &[CalibrationRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if let Some(r) = records.iter().find(|r| !(r.entropy.is_finite() && r.entropy >= 0.0)) {
        return Err(Error::InvalidRequest(format!(
            "record entropy must be finite and non-negative, got {}",
            r.entropy
        )));
    }
    Ok(())
}

/// Picks the grid pair with the best mean held-out objective over `k`
/// seeded folds. Ties go to fewer mean retrieval steps, then the smaller
/// `tau_low`, then the smaller `tau_high`.
pub fn calibrate(records: &[CalibrationRecord], grid: &[Thresholds], options: CalibrationOptions) -> Result<Calibration> {
    check_records(records)?;
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    for t in grid {
        t.validate().map_err(|e| Error::InvalidGrid(e.to_string()))?;
    }
    let k = options.k_folds;
    if k < 2 || k > records.len() {
        return Err(Error::InvalidRequest(format!(
            "k_folds must be between 2 and the number of records ({}), got {k}",
            records.len()
        )));
    }
    let folds = fold_assignment(records.len(), k, options.seed);

    let mut scores = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut fold_sum = vec![0.0; k];
        let mut fold_len = vec![0usize; k];
        let mut steps = 0.0;
        for (r, &f) in records.iter().zip(&folds) {
            let mode = t.mode_for(r.entropy);
            fold_sum[f] += r.score(mode, options.objective)?;
            fold_len[f] += 1;
            steps += r.steps(mode, options.default_multi_steps);
        }
        let cv_score = fold_sum
            .iter()
            .zip(&fold_len)
            .map(|(s, &n)| s / n as f64)
            .sum::<f64>()
            / k as f64;
        scores.push(GridScore {
            thresholds: t,
            cv_score,
            mean_steps: steps / records.len() as f64,
        });
    }

    let mut best = &scores[0];
    for s in &scores[1..] {
        if better(s, best) {
            best = s;
        }
    }
    Ok(Calibration {
        best: best.clone(),
        scores,
    })
}

fn better(a: &GridScore, b: &GridScore) -> bool {
    if (a.cv_score - b.cv_score).abs() > SCORE_TIE {
        return a.cv_score > b.cv_score;
    }
    if (a.mean_steps - b.mean_steps).abs() > SCORE_TIE {
        return a.mean_steps < b.mean_steps;
    }
    (a.thresholds.tau_low, a.thresholds.tau_high) < (b.thresholds.tau_low, b.thresholds.tau_high)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Accuracy of the answer the routed mode produces.
    pub accuracy: f64,
    /// Accuracy of the closed-book answer alone.
    pub closed_book_accuracy: f64,
    /// Fraction of records routed to any retrieval.
    pub retrieval_frequency: f64,
}

/// Entropy histogram with per-bucket accuracy and retrieval frequency.
/// Buckets are `[i*w, (i+1)*w)`; empty buckets are omitted.
pub fn entropy_accuracy_profile(
    records: &[CalibrationRecord],
    thresholds: Thresholds,
    bucket_width: f64,
) -> Result<Vec<ProfileBucket>> {
    check_records(records)?;
    thresholds.validate()?;
    if !(bucket_width.is_finite() && bucket_width > 0.0) {
        return Err(Error::InvalidRequest(format!("bucket width must be positive, got {bucket_width}")));
    }
    // (count, routed correct, closed-book correct, retrieved)
    let mut buckets: BTreeMap<u64, (usize, usize, usize, usize)> = BTreeMap::new();
    for r in records {
        // the epsilon keeps e.g. 0.3 / 0.1 = 2.9999999999999996 in bucket 3
        let idx = (r.entropy / bucket_width + 1e-9).floor() as u64;
        let mode = thresholds.mode_for(r.entropy);
        let b = buckets.entry(idx).or_default();
        b.0 += 1;
        b.1 += usize::from(r.correct(mode));
        b.2 += usize::from(r.correct_without_retrieval);
        b.3 += usize::from(mode != RetrievalMode::NoRetrieval);
    }
    Ok(buckets
        .into_iter()
        .map(|(idx, (n, ok, closed, retrieved))| ProfileBucket {
            lower: idx as f64 * bucket_width,
            upper: (idx + 1) as f64 * bucket_width,
            count: n,
            accuracy: ok as f64 / n as f64,
            closed_book_accuracy: closed as f64 / n as f64,
            retrieval_frequency: retrieved as f64 / n as f64,
        })
        .collect())
}

/// Plain-text rendering of a profile.
pub fn render_profile(buckets: &[ProfileBucket]) -> String {
    let mut out = format!(
        "{:<14} {:>6} {:>9} {:>12} {:>10}\n",
        "entropy", "count", "accuracy", "closed-book", "retrieval"
    );
    for b in buckets {
        out.push_str(&format!(
            "{:<14} {:>6} {:>9.3} {:>12.3} {:>10.3}\n",
            format!("[{:.2}, {:.2})", b.lower, b.upper),
            b.count,
            b.accuracy,
            b.closed_book_accuracy,
            b.retrieval_frequency
        ));
    }
    out
}

pub fn parse_calibration_records(text: &str) -> Result<Vec<CalibrationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: CalibrationRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_calibration_records(path: &Path) -> Result<Vec<CalibrationRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening calibration records {}", path.display()), e))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io("reading calibration records", e))?);
        text.push('\n');
    }
    parse_calibration_records(&text)
}

pub fn write_calibration_records<W: Write>(mut w: W, records: &[CalibrationRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io("writing calibration records", e))?;
    }
    Ok(())
}
