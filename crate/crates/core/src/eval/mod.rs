//! Evaluation: flip-fraction statistics and rationale/annotation overlap.
//!
//! Overlap scoring compares an extracted rationale against a human
//! annotation as sets of token positions. The protocol, applied
//! symmetrically to both sets:
//!
//! 1. drop stopword and punctuation positions,
//! 2. either add the answer span to the human set (include mode) or
//!    remove it from both sets (exclude mode),
//! 3. skip the example entirely if either set came out empty.
//!
//! Precision/recall/F1 then aggregate two ways: micro (pool the
//! intersection and set sizes over all examples, then divide) and macro
//! (average the per-example scores). Micro is the headline number.

use std::collections::BTreeSet;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Span;

/// Histogram bin width for flip fractions.
pub const FLIP_BIN_WIDTH: f64 = 0.05;
/// Number of histogram bins covering (0, 1].
pub const FLIP_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no fractions to aggregate")]
    Empty,
    #[error("fraction {0} outside (0, 1]")]
    FractionRange(f64),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mean, population variance, and a 0.05-wide histogram of flip
/// fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlipStats {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// `histogram[b]` counts fractions in `(b*0.05, (b+1)*0.05]`; bin 0
    /// starts at 0 exclusive because fractions are never 0.
    pub histogram: Vec<usize>,
}

/// Aggregate flip fractions. Every fraction must lie in `(0, 1]`.
pub fn flip_fraction_stats(fractions: &[f64]) -> Result<FlipStats, EvalError> {
    if fractions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut histogram = vec![0usize; FLIP_BINS];
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(EvalError::FractionRange(f));
        }
        // upper-inclusive bins: 0.05 lands in bin 0, 1.0 in bin 19
        let bin = ((f / FLIP_BIN_WIDTH).ceil() as usize).saturating_sub(1).min(FLIP_BINS - 1);
        histogram[bin] += 1;
    }
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let variance = fractions.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n;
    Ok(FlipStats { count: fractions.len(), mean, variance, histogram })
}

/// Stopword membership. Punctuation-only tokens always count as stop
/// tokens regardless of the word list.
#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
}

impl Default for StopwordList {
    fn default() -> Self {
        Self::from_text(include_str!("stopwords.txt"))
    }
}

impl StopwordList {
    fn from_text(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        StopwordList { words }
    }

    /// One lowercase word per line; blank lines ignored.
    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)
            .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })?;
        Ok(Self::from_text(&text))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_stop(&self, token: &str) -> bool {
        !token.chars().any(char::is_alphanumeric) || self.words.contains(&token.to_lowercase())
    }
}

/// How the answer span enters the overlap comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerSpanMode {
    /// Answer tokens join the human rationale set.
    Include,
    /// Answer tokens are removed from both sets.
    Exclude,
}

/// Overlap protocol settings.
#[derive(Debug, Clone)]
pub struct OverlapConfig {
    pub mode: AnswerSpanMode,
    /// Also treat the model's predicted span as answer tokens (unioned
    /// with the gold span) rather than the gold span alone.
    pub include_predicted_answer: bool,
    pub stopwords: StopwordList,
}

impl OverlapConfig {
    pub fn new(mode: AnswerSpanMode) -> Self {
        OverlapConfig { mode, include_predicted_answer: false, stopwords: StopwordList::default() }
    }
}

/// One example's contribution to the pooled scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: usize,
    pub rationale: usize,
    pub human: usize,
}

/// Apply the overlap protocol to one example. Returns `None` when the
/// example is skipped because either filtered set is empty.
pub fn overlap_counts(
    rationale: &[usize],
    human: &[usize],
    words: &[String],
    gold_answer: Span,
    predicted_answer: Option<Span>,
    config: &OverlapConfig,
) -> Option<OverlapCounts> {
    let mut answer: BTreeSet<usize> = gold_answer.positions().collect();
    if config.include_predicted_answer {
        if let Some(pred) = predicted_answer {
            answer.extend(pred.positions());
        }
    }
    let keep = |pos: &usize| -> bool {
        let word = words.get(*pos).map(String::as_str).unwrap_or("");
        if config.stopwords.is_stop(word) {
            return false;
        }
        match config.mode {
            AnswerSpanMode::Include => true,
            AnswerSpanMode::Exclude => !answer.contains(pos),
        }
    };
    let rationale_set: BTreeSet<usize> = rationale.iter().copied().filter(|p| keep(p)).collect();
    let mut human_set: BTreeSet<usize> = human.iter().copied().filter(|p| keep(p)).collect();
    if config.mode == AnswerSpanMode::Include {
        // answer tokens count as human-annotated evidence; the stopword
        // filter still applies to them
        human_set.extend(answer.iter().copied().filter(|p| {
            let word = words.get(*p).map(String::as_str).unwrap_or("");
            !config.stopwords.is_stop(word)
        }));
    }
    if rationale_set.is_empty() || human_set.is_empty() {
        return None;
    }
    Some(OverlapCounts {
        intersection: rationale_set.intersection(&human_set).count(),
        rationale: rationale_set.len(),
        human: human_set.len(),
    })
}

/// Precision, recall, F1 — all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean of precision and recall (0 when both are 0).
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl OverlapCounts {
    pub fn scores(&self) -> Prf {
        let precision = self.intersection as f64 / self.rationale as f64;
        let recall = self.intersection as f64 / self.human as f64;
        Prf { precision, recall, f1: f1_score(precision, recall) }
    }
}

/// Micro- and macro-aggregated overlap over a collection of examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Pooled counts first, divide once — the headline scores.
    pub micro: Prf,
    /// Unweighted mean of per-example scores.
    pub macro_: Prf,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Aggregate per-example counts (`None` entries are skipped examples).
pub fn aggregate_overlap(per_example: &[Option<OverlapCounts>]) -> Result<OverlapReport, EvalError> {
    let counts: Vec<OverlapCounts> = per_example.iter().flatten().copied().collect();
    if counts.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut inter, mut rat, mut hum) = (0usize, 0usize, 0usize);
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0f64, 0.0f64, 0.0f64);
    for c in &counts {
        inter += c.intersection;
        rat += c.rationale;
        hum += c.human;
        let s = c.scores();
        p_sum += s.precision;
        r_sum += s.recall;
        f_sum += s.f1;
    }
    let micro_p = inter as f64 / rat as f64;
    let micro_r = inter as f64 / hum as f64;
    let n = counts.len() as f64;
    Ok(OverlapReport {
        micro: Prf { precision: micro_p, recall: micro_r, f1: f1_score(micro_p, micro_r) },
        macro_: Prf { precision: p_sum / n, recall: r_sum / n, f1: f_sum / n },
        evaluated: counts.len(),
        skipped: per_example.len() - counts.len(),
    })
}
