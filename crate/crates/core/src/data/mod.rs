//! Dataset types, tokenization, and loaders.
//!
//! Two input layouts are accepted — a flat `{"examples": [...]}` file and
//! the nested SQuAD v1.1 layout — and both normalize to [`QaExample`].
//! Human rationale annotations ride in a JSONL sidecar keyed by example
//! id. Token positions, not character offsets, are the currency
//! everywhere downstream; [`tokenize`] is the single place that mapping
//! is defined.

pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// One token of a passage or question.
///
/// `text` is lowercased; `start..end` is the byte range in the original
/// string (so the raw surface form is always recoverable by slicing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Tokenization of one string, in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    /// Smallest contiguous token range overlapping the byte range
    /// `byte_start..byte_end`. `None` when nothing overlaps.
    pub fn covering_span(&self, byte_start: usize, byte_end: usize) -> Option<Span> {
        let mut first = None;
        let mut last = None;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.end > byte_start && t.start < byte_end {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
        Some(Span { start: first?, end: last? })
    }
}

/// Lowercase word/punctuation tokenizer.
///
/// Alphanumeric runs become one token each; every other non-whitespace
/// character becomes its own single-character token. Offsets index the
/// original string.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, s: usize, e: usize| {
        tokens.push(Token { text: text[s..e].to_lowercase(), start: s, end: e });
    };
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            run_start.get_or_insert(i);
        } else {
            if let Some(s) = run_start.take() {
                flush(&mut tokens, s, i);
            }
            if !ch.is_whitespace() {
                flush(&mut tokens, i, i + ch.len_utf8());
            }
        }
    }
    if let Some(s) = run_start {
        flush(&mut tokens, s, text.len());
    }
    TokenizedText { tokens }
}

/// Inclusive token-position interval `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} > end {end}");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: usize) -> bool {
        pos >= self.start && pos <= self.end
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

impl TryFrom<(usize, usize)> for Span {
    type Error = String;
    fn try_from((start, end): (usize, usize)) -> Result<Self, Self::Error> {
        if start <= end {
            Ok(Span { start, end })
        } else {
            Err(format!("span start {start} > end {end}"))
        }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// One reading-comprehension example.
///
/// `answer_start` is a character offset into `passage`; `answer_text`
/// must occur there verbatim (case-insensitively) or the example is
/// considered unalignable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub answer_text: String,
    pub answer_start: usize,
}

impl QaExample {
    /// Gold answer as a token span under this crate's tokenizer, or
    /// `None` when the character span cannot be aligned.
    pub fn answer_span(&self, passage_tokens: &TokenizedText) -> Option<Span> {
        let byte_start = char_to_byte(&self.passage, self.answer_start)?;
        let byte_end = byte_start + self.answer_text.len();
        if byte_end > self.passage.len() {
            return None;
        }
        let found = &self.passage[byte_start..byte_end];
        if !found.eq_ignore_ascii_case(&self.answer_text) {
            return None;
        }
        passage_tokens.covering_span(byte_start, byte_end)
    }
}

fn char_to_byte(s: &str, char_offset: usize) -> Option<usize> {
    if char_offset == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (byte, _) in s.char_indices() {
        if count == char_offset {
            return Some(byte);
        }
        count += 1;
    }
    // one past the last character addresses the end of the string
    (count == char_offset).then_some(s.len())
}

/// Human rationale for one example: which passage tokens the annotators
/// marked as evidence for the answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanRationale {
    pub example_id: String,
    pub intervals: Vec<Span>,
    pub annotators: u32,
    pub consensus: bool,
}

impl HumanRationale {
    /// All annotated token positions, ascending and deduplicated.
    pub fn positions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.intervals.iter().flat_map(|s| s.positions()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// A loaded example collection, format-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<QaExample>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyDataset {
    Flat { examples: Vec<QaExample> },
    Squad { data: Vec<SquadArticle> },
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    #[allow(dead_code)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

impl Dataset {
    /// Load either supported layout, sniffed from the JSON structure.
    /// SQuAD questions keep their first answer; questions with no answer
    /// are skipped.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let parsed: AnyDataset = serde_json::from_str(&raw)
            .map_err(|e| DataError::Json { path: path.display().to_string(), source: e })?;
        let examples = match parsed {
            AnyDataset::Flat { examples } => examples,
            AnyDataset::Squad { data } => data
                .into_iter()
                .flat_map(|a| a.paragraphs)
                .flat_map(|p| {
                    let context = p.context;
                    p.qas
                        .into_iter()
                        .filter_map(|qa| {
                            let answer = qa.answers.into_iter().next()?;
                            Some(QaExample {
                                id: qa.id,
                                passage: context.clone(),
                                question: qa.question,
                                answer_text: answer.text,
                                answer_start: answer.answer_start,
                            })
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
        };
        Ok(Dataset { examples })
    }

    /// Write the flat layout with stable field order.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let body = serde_json::to_string_pretty(self).expect("dataset serializes");
        fs::write(path, body).map_err(|e| io_err(path, e))
    }

    /// Drop examples whose gold answer cannot be mapped to token
    /// positions; returns the dropped ids so callers can log them.
    pub fn retain_alignable(&mut self) -> Vec<String> {
        let mut dropped = Vec::new();
        self.examples.retain(|ex| {
            let ok = ex.answer_span(&tokenize(&ex.passage)).is_some();
            if !ok {
                dropped.push(ex.id.clone());
            }
            ok
        });
        dropped
    }

    /// Split off the first `n` examples as a training set, keeping the
    /// rest as a held-out set. Order-preserving and deterministic.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.examples.len());
        let (train, rest) = self.examples.split_at(n);
        (Dataset { examples: train.to_vec() }, Dataset { examples: rest.to_vec() })
    }
}

/// Load a JSONL annotation sidecar (one [`HumanRationale`] per line;
/// blank lines allowed). Errors carry the offending line number.
pub fn load_annotations(path: &Path) -> Result<Vec<HumanRationale>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rationale: HumanRationale = serde_json::from_str(&line).map_err(|e| {
            DataError::Invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rationale);
    }
    Ok(out)
}

/// Write annotations as JSONL, one record per line.
pub fn save_annotations(path: &Path, annotations: &[HumanRationale]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for a in annotations {
        let line = serde_json::to_string(a).expect("annotation serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Index annotations by example id. Later duplicates win; ids with no
/// matching example are simply never looked up.
pub fn index_annotations(annotations: Vec<HumanRationale>) -> HashMap<String, HumanRationale> {
    annotations.into_iter().map(|a| (a.example_id.clone(), a)).collect()
}
