//! Plain-text report rendering: aligned tables for flip-fraction and
//! overlap results, an ASCII histogram, and inline rationale markup.
//!
//! Everything here is deterministic string formatting — rows render in
//! the order given, numbers round half-to-even via `format!`.

use crate::eval::{FlipStats, OverlapReport, FLIP_BIN_WIDTH};

/// Render a flip-fraction summary table, one row per labelled run.
pub fn flip_table(rows: &[(String, FlipStats)]) -> String {
    let mut cells: Vec<[String; 4]> = vec![[
        "run".into(),
        "examples".into(),
        "mean fraction".into(),
        "variance".into(),
    ]];
    for (label, stats) in rows {
        cells.push([
            label.clone(),
            stats.count.to_string(),
            format!("{:.3}", stats.mean),
            format!("{:.3}", stats.variance),
        ]);
    }
    render_table(&cells, 1)
}

/// Render an overlap summary table, one row per labelled run.
/// Scores print as percentages with one decimal.
pub fn overlap_table(rows: &[(String, OverlapReport)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![vec![
        "run".into(),
        "P".into(),
        "R".into(),
        "F1".into(),
        "P (macro)".into(),
        "R (macro)".into(),
        "F1 (macro)".into(),
        "evaluated".into(),
        "skipped".into(),
    ]];
    for (label, report) in rows {
        cells.push(vec![
            label.clone(),
            percent(report.micro.precision),
            percent(report.micro.recall),
            percent(report.micro.f1),
            percent(report.macro_.precision),
            percent(report.macro_.recall),
            percent(report.macro_.f1),
            report.evaluated.to_string(),
            report.skipped.to_string(),
        ]);
    }
    let fixed: Vec<Vec<String>> = cells;
    render_rows(&fixed, 1)
}

fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// ASCII histogram of flip fractions, one line per non-empty bin.
pub fn flip_histogram(stats: &FlipStats) -> String {
    let max = stats.histogram.iter().copied().max().unwrap_or(0).max(1);
    let mut out = String::new();
    for (bin, &count) in stats.histogram.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let lo = bin as f64 * FLIP_BIN_WIDTH;
        let hi = lo + FLIP_BIN_WIDTH;
        let bar_len = (count * 40).div_ceil(max);
        out.push_str(&format!(
            "({:.2}, {:.2}] {:>6}  {}\n",
            lo,
            hi,
            count,
            "#".repeat(bar_len)
        ));
    }
    out
}

/// Render a passage with its rationale words wrapped in `[` `]`.
/// `indicators` may be in any order; duplicates are harmless.
pub fn mark_rationale(words: &[String], indicators: &[usize]) -> String {
    let mut marked = vec![false; words.len()];
    for &i in indicators {
        if i < words.len() {
            marked[i] = true;
        }
    }
    words
        .iter()
        .zip(&marked)
        .map(|(word, &m)| if m { format!("[{word}]") } else { word.clone() })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One example's worth of human-readable extraction output.
pub fn example_block(
    id: &str,
    question: &str,
    words: &[String],
    indicators: &[usize],
    flipped: bool,
    fraction: f64,
) -> String {
    format!(
        "{id}\n  Q: {question}\n  {}\n  removed {}/{} words ({}), flipped: {flipped}\n",
        mark_rationale(words, indicators),
        indicators.len(),
        words.len(),
        format_args!("{:.3}", fraction),
    )
}

fn render_table<const N: usize>(rows: &[[String; N]], left_columns: usize) -> String {
    let owned: Vec<Vec<String>> = rows.iter().map(|r| r.to_vec()).collect();
    render_rows(&owned, left_columns)
}

/// Column-aligned rendering: the first `left_columns` columns are
/// left-aligned, the rest right-aligned, two spaces between columns.
fn render_rows(rows: &[Vec<String>], left_columns: usize) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i < left_columns {
                line.push_str(&format!("{:<width$}", cell, width = widths[i]));
            } else {
                line.push_str(&format!("{:>width$}", cell, width = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
