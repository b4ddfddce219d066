//! `evaluate`: flip-fraction statistics and rationale/annotation
//! overlap tables from an extraction dump.

use rationale_core::data::{index_annotations, load_annotations};
use rationale_core::eval::{
    aggregate_overlap, flip_fraction_stats, overlap_counts, AnswerSpanMode, EvalError, FlipStats,
    OverlapConfig, OverlapReport, StopwordList,
};
use rationale_core::report::{flip_histogram, flip_table, overlap_table};
use serde::Serialize;

use crate::args::EvaluateArgs;
use crate::config::{resolve, AnswerSpanChoice, FileConfig};
use crate::errors::CliError;
use crate::manifest::{write_text, Manifest};
use crate::records::{read_jsonl, RationaleRecord};

#[derive(Serialize)]
struct EvaluationSummary {
    records: usize,
    flipped: usize,
    flip: FlipStats,
    flip_flipped_only: Option<FlipStats>,
    overlap_include: Option<OverlapReport>,
    overlap_exclude: Option<OverlapReport>,
    /// Records dropped because no annotation matched their id.
    missing_annotation: usize,
    /// Records dropped because the gold answer did not align to tokens.
    missing_gold: usize,
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let choice = resolve(args.answer_span, file.answer_span, AnswerSpanChoice::Both);
    let include_predicted =
        args.include_predicted_answer || file.include_predicted_answer.unwrap_or(false);

    let records: Vec<RationaleRecord> = read_jsonl(&args.rationales)?;
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no rationale records",
            args.rationales.display()
        )));
    }
    let annotations = index_annotations(
        load_annotations(&args.annotations).map_err(|e| CliError::from_data(e, "annotations"))?,
    );
    let stopwords = match &args.stopwords {
        Some(path) => StopwordList::from_file(path).map_err(|e| match e {
            EvalError::Io { path, source } => CliError::Input(format!("{path}: {source}")),
            other => CliError::Input(format!("stopwords: {other}")),
        })?,
        None => StopwordList::default(),
    };

    let from_eval = |e: EvalError| CliError::Input(format!("{}: {e}", args.rationales.display()));
    let all: Vec<f64> = records.iter().map(|r| r.fraction).collect();
    let flipped_fractions: Vec<f64> =
        records.iter().filter(|r| r.flipped).map(|r| r.fraction).collect();
    let flip_all = flip_fraction_stats(&all).map_err(from_eval)?;
    let flip_flipped_only = if flipped_fractions.is_empty() {
        None
    } else {
        Some(flip_fraction_stats(&flipped_fractions).map_err(from_eval)?)
    };

    let mut missing_annotation = 0usize;
    let mut missing_gold = 0usize;
    let mut overlap_for = |mode: AnswerSpanMode| -> Result<OverlapReport, CliError> {
        let config = OverlapConfig {
            mode,
            include_predicted_answer: include_predicted,
            stopwords: stopwords.clone(),
        };
        let mut per_example = Vec::new();
        missing_annotation = 0;
        missing_gold = 0;
        for record in &records {
            let Some(human) = annotations.get(&record.example_id) else {
                missing_annotation += 1;
                continue;
            };
            let Some(gold) = record.gold_span else {
                missing_gold += 1;
                continue;
            };
            per_example.push(overlap_counts(
                &record.indicators,
                &human.positions(),
                &record.words,
                gold,
                Some(record.original_span),
                &config,
            ));
        }
        if per_example.is_empty() {
            return Err(CliError::Input(format!(
                "{}: no record has both an annotation and an aligned gold answer",
                args.rationales.display()
            )));
        }
        aggregate_overlap(&per_example).map_err(|e| match e {
            EvalError::Empty => CliError::Input(format!(
                "{}: every record was skipped in {} mode (stop-word and \
                 answer filtering left an empty rationale or annotation set \
                 on all {} records)",
                args.rationales.display(),
                mode_name(mode),
                per_example.len()
            )),
            other => CliError::Input(format!("{}: {other}", args.rationales.display())),
        })
    };
    let overlap_include = match choice {
        AnswerSpanChoice::Include | AnswerSpanChoice::Both => {
            Some(overlap_for(AnswerSpanMode::Include)?)
        }
        AnswerSpanChoice::Exclude => None,
    };
    let overlap_exclude = match choice {
        AnswerSpanChoice::Exclude | AnswerSpanChoice::Both => {
            Some(overlap_for(AnswerSpanMode::Exclude)?)
        }
        AnswerSpanChoice::Include => None,
    };

    let summary = EvaluationSummary {
        records: records.len(),
        flipped: flipped_fractions.len(),
        flip: flip_all.clone(),
        flip_flipped_only: flip_flipped_only.clone(),
        overlap_include: overlap_include.clone(),
        overlap_exclude: overlap_exclude.clone(),
        missing_annotation,
        missing_gold,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Input(format!("evaluation: {e}")))?;
    write_text(&args.out.join("evaluation.json"), &(json + "\n"))?;

    let mut flip_rows = vec![(format!("{} (all)", args.label), flip_all.clone())];
    if let Some(stats) = &flip_flipped_only {
        flip_rows.push((format!("{} (flipped only)", args.label), stats.clone()));
    }
    let flip_text =
        format!("{}\n{}", flip_table(&flip_rows), flip_histogram(&flip_all));
    write_text(&args.out.join("flip_report.txt"), &flip_text)?;

    let mut overlap_rows = Vec::new();
    if let Some(report) = &overlap_include {
        overlap_rows.push((format!("{} (incl. answer)", args.label), report.clone()));
    }
    if let Some(report) = &overlap_exclude {
        overlap_rows.push((format!("{} (excl. answer)", args.label), report.clone()));
    }
    write_text(&args.out.join("overlap_report.txt"), &overlap_table(&overlap_rows))?;

    let mut manifest = Manifest::new("evaluate");
    manifest.set("answer-span", answer_span_name(choice));
    manifest.set("include-predicted-answer", include_predicted);
    manifest.set("label", &args.label);
    manifest.add_input(&args.rationales)?;
    manifest.add_input(&args.annotations)?;
    if let Some(path) = &args.stopwords {
        manifest.add_input(path)?;
    }
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }
    manifest.write(&args.out)?;

    println!(
        "evaluated {} records ({} flipped, mean fraction {:.3}) -> {}",
        summary.records,
        summary.flipped,
        summary.flip.mean,
        args.out.display()
    );
    Ok(())
}

fn answer_span_name(choice: AnswerSpanChoice) -> &'static str {
    match choice {
        AnswerSpanChoice::Include => "include",
        AnswerSpanChoice::Exclude => "exclude",
        AnswerSpanChoice::Both => "both",
    }
}

fn mode_name(mode: AnswerSpanMode) -> &'static str {
    match mode {
        AnswerSpanMode::Include => "include-answer",
        AnswerSpanMode::Exclude => "exclude-answer",
    }
}
