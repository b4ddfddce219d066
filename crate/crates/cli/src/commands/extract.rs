//! `extract`: attribution and rationale dumps for every example.

use rationale_core::attribution::AttributionConfig;
use rationale_core::data::Dataset;
use rationale_core::model::{QaModel, SpanTarget};
use rationale_core::pipeline::{process_dataset, PipelineConfig, RankingStrategy};
use rationale_core::rationale::FlipMode;

use crate::args::ExtractArgs;
use crate::config::{resolve, FileConfig};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::records::{write_jsonl, AttributionRecord, RationaleRecord};

pub fn run(args: ExtractArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let steps = resolve(args.ig_steps, file.ig_steps, AttributionConfig::default().steps);
    let flip = resolve(args.flip, file.flip, FlipMode::PredictionChange);
    let ranking = resolve(args.ranking, file.ranking, RankingStrategy::Ig);
    let seed = resolve(args.seed, file.seed, 42);
    let jobs = args.jobs.or(file.jobs);
    if steps == 0 {
        return Err(CliError::Usage("--ig-steps must be positive".into()));
    }
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    if let Some(jobs) = jobs {
        // Ignore failure: the pool can only already exist, in which case
        // the run proceeds on it (results do not depend on thread count).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }

    let dataset = Dataset::load(&args.dataset).map_err(|e| CliError::from_data(e, "dataset"))?;
    if dataset.examples.is_empty() {
        return Err(CliError::Input(format!("{}: no examples", args.dataset.display())));
    }
    let model =
        QaModel::load(&args.checkpoint).map_err(|e| CliError::from_model(e, "checkpoint"))?;

    let config = PipelineConfig {
        attribution: AttributionConfig { steps, ..AttributionConfig::default() },
        target: SpanTarget::LogProb,
        flip,
        ranking,
        seed,
    };
    let results = process_dataset(&model, &dataset, &config)
        .map_err(|e| CliError::from_pipeline(e, "extract"))?;

    let rationales: Vec<RationaleRecord> =
        results.iter().map(RationaleRecord::from_result).collect();
    let attributions: Vec<AttributionRecord> =
        results.iter().filter_map(AttributionRecord::from_result).collect();
    write_jsonl(&args.out.join("rationales.jsonl"), &rationales)?;
    write_jsonl(&args.out.join("attributions.jsonl"), &attributions)?;

    let mut manifest = Manifest::new("extract");
    manifest.set("ig-steps", steps);
    manifest.set("flip", flip);
    manifest.set("ranking", ranking);
    manifest.set("seed", seed);
    manifest.set("jobs", jobs);
    manifest.set("target", "log-prob");
    manifest.add_input(&args.dataset)?;
    manifest.add_input(&args.checkpoint)?;
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }
    manifest.write(&args.out)?;

    let flipped = rationales.iter().filter(|r| r.flipped).count();
    let mean: f64 =
        rationales.iter().map(|r| r.fraction).sum::<f64>() / rationales.len() as f64;
    println!(
        "extracted {} rationales ({flipped} flipped, mean fraction {mean:.3}) -> {}",
        rationales.len(),
        args.out.display()
    );
    Ok(())
}
