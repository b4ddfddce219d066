//! `train`: fit a span predictor and write checkpoint, loss trace, and
//! the held-out split for downstream extraction.

use rationale_core::data::Dataset;
use rationale_core::model::{ModelKind, QaModel, TrainConfig};
use serde::Serialize;

use crate::args::TrainArgs;
use crate::config::{resolve, FileConfig};
use crate::errors::CliError;
use crate::manifest::{write_text, Manifest};

const DEFAULT_DIM: usize = 64;

#[derive(Serialize)]
struct TrainSummary {
    /// Mean loss over the training set before training and after each
    /// epoch (`epochs + 1` entries).
    losses: Vec<f64>,
    /// Exact-span accuracy on the held-out examples, when any were held
    /// out.
    holdout_accuracy: Option<f64>,
    holdout_examples: usize,
    train_examples: usize,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let kind = resolve(args.model, file.model, ModelKind::CosineLite);
    let dim = resolve(args.dim, file.dim, DEFAULT_DIM);
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        epochs: resolve(args.epochs, file.epochs, defaults.epochs),
        batch_size: resolve(args.batch_size, file.batch_size, defaults.batch_size),
        learning_rate: resolve(args.learning_rate, file.learning_rate, defaults.learning_rate),
        seed: resolve(args.seed, file.seed, defaults.seed),
    };
    let holdout = resolve(args.holdout, file.holdout, 0);
    if dim == 0 || train_config.epochs == 0 || train_config.batch_size == 0 {
        return Err(CliError::Usage("--dim, --epochs, and --batch-size must be positive".into()));
    }
    if !(train_config.learning_rate.is_finite() && train_config.learning_rate > 0.0) {
        return Err(CliError::Usage("--learning-rate must be positive".into()));
    }

    let dataset = Dataset::load(&args.dataset).map_err(|e| CliError::from_data(e, "dataset"))?;
    if holdout >= dataset.examples.len() {
        return Err(CliError::Usage(format!(
            "--holdout {holdout} leaves no training examples (dataset has {})",
            dataset.examples.len()
        )));
    }
    let (train_set, holdout_set) = dataset.split_at(dataset.examples.len() - holdout);

    let mut model = QaModel::init(kind, dim, train_config.seed, &train_set)
        .map_err(|e| CliError::from_model(e, "init"))?;
    let trace = model
        .train(&train_set, &train_config)
        .map_err(|e| CliError::from_model(e, "train"))?;
    let holdout_accuracy = if holdout_set.examples.is_empty() {
        None
    } else {
        Some(
            model
                .accuracy(&holdout_set)
                .map_err(|e| CliError::from_model(e, "holdout accuracy"))?,
        )
    };

    let checkpoint_path = args.out.join("checkpoint.json");
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    model.save(&checkpoint_path).map_err(|e| CliError::from_model(e, "checkpoint"))?;
    let summary = TrainSummary {
        losses: trace.losses,
        holdout_accuracy,
        holdout_examples: holdout_set.examples.len(),
        train_examples: train_set.examples.len(),
    };
    let trace_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Input(format!("train trace: {e}")))?;
    write_text(&args.out.join("train_trace.json"), &(trace_json + "\n"))?;
    if !holdout_set.examples.is_empty() {
        holdout_set
            .save(&args.out.join("holdout.json"))
            .map_err(|e| CliError::from_data(e, "holdout"))?;
        let ids: Vec<&str> = holdout_set.examples.iter().map(|e| e.id.as_str()).collect();
        let ids_json = serde_json::to_string_pretty(&ids)
            .map_err(|e| CliError::Input(format!("holdout ids: {e}")))?;
        write_text(&args.out.join("holdout_ids.json"), &(ids_json + "\n"))?;
    }

    let mut manifest = Manifest::new("train");
    manifest.set("model", kind);
    manifest.set("dim", dim);
    manifest.set("epochs", train_config.epochs);
    manifest.set("batch-size", train_config.batch_size);
    manifest.set("learning-rate", train_config.learning_rate);
    manifest.set("seed", train_config.seed);
    manifest.set("holdout", holdout);
    manifest.add_input(&args.dataset)?;
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }
    manifest.write(&args.out)?;

    let first = summary.losses.first().copied().unwrap_or(f64::NAN);
    let last = summary.losses.last().copied().unwrap_or(f64::NAN);
    match summary.holdout_accuracy {
        Some(acc) => println!(
            "trained {kind} (dim {dim}) on {} examples: loss {first:.4} -> {last:.4}, \
             holdout accuracy {:.1}% ({} examples)",
            summary.train_examples,
            acc * 100.0,
            summary.holdout_examples
        ),
        None => println!(
            "trained {kind} (dim {dim}) on {} examples: loss {first:.4} -> {last:.4}",
            summary.train_examples
        ),
    }
    Ok(())
}
