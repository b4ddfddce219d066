//! `report`: human-readable run summary with rationale words marked
//! inline in each passage.

use std::collections::HashMap;
use std::fmt::Write as _;

use rationale_core::data::Dataset;
use rationale_core::report::example_block;

use crate::args::ReportArgs;
use crate::config::{resolve, FileConfig};
use crate::errors::CliError;
use crate::manifest::{write_text, Manifest};
use crate::records::{read_jsonl, RationaleRecord};

const DEFAULT_LIMIT: usize = 20;

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let limit = resolve(args.limit, file.limit, DEFAULT_LIMIT);

    let dataset = Dataset::load(&args.dataset).map_err(|e| CliError::from_data(e, "dataset"))?;
    let questions: HashMap<&str, &str> =
        dataset.examples.iter().map(|e| (e.id.as_str(), e.question.as_str())).collect();
    let records: Vec<RationaleRecord> = read_jsonl(&args.rationales)?;
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no rationale records",
            args.rationales.display()
        )));
    }

    let flipped = records.iter().filter(|r| r.flipped).count();
    let mean: f64 = records.iter().map(|r| r.fraction).sum::<f64>() / records.len() as f64;
    let mut text = format!(
        "{} examples, {flipped} flipped, mean flip fraction {mean:.3}\n\
         rationale words are marked [inline]\n\n",
        records.len()
    );
    for record in records.iter().take(limit) {
        let question = questions
            .get(record.example_id.as_str())
            .copied()
            .unwrap_or("(question not in dataset)");
        let block = example_block(
            &record.example_id,
            question,
            &record.words,
            &record.indicators,
            record.flipped,
            record.fraction,
        );
        let _ = writeln!(text, "{block}");
    }
    let report_path = args.out.join("report.txt");
    write_text(&report_path, &text)?;

    let mut manifest = Manifest::new("report");
    manifest.set("limit", limit);
    manifest.add_input(&args.dataset)?;
    manifest.add_input(&args.rationales)?;
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }
    manifest.write(&args.out)?;

    println!("wrote {}", report_path.display());
    Ok(())
}
