//! On-disk dump schemas (JSONL, one record per line) written by
//! `extract` and read back by `evaluate` and `report`.

use std::fs;
use std::path::Path;

use rationale_core::data::Span;
use rationale_core::pipeline::ExampleRationale;
use serde::{Deserialize, Serialize};

use crate::errors::CliError;
use crate::manifest::write_text;

/// One extracted rationale. Self-contained: carries the passage words
/// so downstream evaluation never re-tokenizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub example_id: String,
    pub words: Vec<String>,
    /// Removal order over all passage positions.
    pub ranking: Vec<usize>,
    /// Positions actually removed, in removal order.
    pub indicators: Vec<usize>,
    pub indicator_words: Vec<String>,
    pub flipped: bool,
    pub fraction: f64,
    pub original_span: Span,
    pub final_span: Span,
    pub gold_span: Option<Span>,
}

/// Per-example attribution dump: importance distribution plus the
/// completeness diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub example_id: String,
    pub words: Vec<String>,
    /// Euclidean norm of each word's attribution vector.
    pub norms: Vec<f64>,
    /// Normalized importance (sums to 1 unless degenerate).
    pub importance: Vec<f64>,
    pub steps: usize,
    pub completeness_gap: f64,
    pub relative_gap: f64,
    pub degenerate: bool,
    pub target_at_input: f64,
    pub target_at_baseline: f64,
}

impl RationaleRecord {
    pub fn from_result(result: &ExampleRationale) -> RationaleRecord {
        RationaleRecord {
            example_id: result.example_id.clone(),
            words: result.words.clone(),
            ranking: result.ranking.clone(),
            indicators: result.indicators.clone(),
            indicator_words: result.indicator_words(),
            flipped: result.flipped,
            fraction: result.fraction,
            original_span: result.original_span,
            final_span: result.final_span,
            gold_span: result.gold_span,
        }
    }
}

impl AttributionRecord {
    /// `None` when the run skipped attribution (random ranking).
    pub fn from_result(result: &ExampleRationale) -> Option<AttributionRecord> {
        let att = result.attribution.as_ref()?;
        Some(AttributionRecord {
            example_id: result.example_id.clone(),
            words: result.words.clone(),
            norms: att.norms.clone(),
            importance: att.importance.clone(),
            steps: att.steps,
            completeness_gap: att.completeness_gap,
            relative_gap: att.relative_gap,
            degenerate: att.degenerate,
            target_at_input: att.target_at_input,
            target_at_baseline: att.target_at_baseline,
        })
    }
}

/// Write records as JSONL.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        text.push_str(&line);
        text.push('\n');
    }
    write_text(path, &text)
}

/// Read JSONL records, reporting the offending line on parse errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| {
            serde_json::from_str(line).map_err(|e| {
                CliError::Input(format!("{} line {}: {e}", path.display(), idx + 1))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_records_and_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records = vec![
            RationaleRecord {
                example_id: "a".into(),
                words: vec!["x".into(), "y".into()],
                ranking: vec![1, 0],
                indicators: vec![1],
                indicator_words: vec!["y".into()],
                flipped: true,
                fraction: 0.5,
                original_span: Span::new(0, 0),
                final_span: Span::new(1, 1),
                gold_span: Some(Span::new(0, 0)),
            },
        ];
        write_jsonl(&path, &records).unwrap();
        let back: Vec<RationaleRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].example_id, "a");
        assert_eq!(back[0].indicator_words, vec!["y".to_string()]);

        fs::write(&path, "not json\n").unwrap();
        let err = read_jsonl::<RationaleRecord>(&path).unwrap_err();
        assert!(format!("{err}").contains("line 1"), "{err}");
    }
}
