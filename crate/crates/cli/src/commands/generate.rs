//! `generate`: synthesize a dataset plus gold rationale annotations.

use rationale_core::data::save_annotations;
use rationale_core::data::synthetic::{generate, SyntheticConfig};

use crate::args::GenerateArgs;
use crate::config::{resolve, FileConfig};
use crate::errors::CliError;
use crate::manifest::Manifest;

/// The generator builds sentences from fixed templates; below this
/// passage length the templates cannot fit a fact and its distractors.
const MIN_SUPPORTED_TOKENS: usize = 25;

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        examples: resolve(args.examples, file.examples, defaults.examples),
        seed: resolve(args.seed, file.seed, defaults.seed),
        min_tokens: resolve(args.min_tokens, file.min_tokens, defaults.min_tokens),
        max_tokens: resolve(args.max_tokens, file.max_tokens, defaults.max_tokens),
    };
    if config.examples == 0 {
        return Err(CliError::Usage("--examples must be positive".into()));
    }
    if config.min_tokens < MIN_SUPPORTED_TOKENS {
        return Err(CliError::Usage(format!(
            "--min-tokens must be at least {MIN_SUPPORTED_TOKENS}"
        )));
    }
    if config.max_tokens < config.min_tokens {
        return Err(CliError::Usage("--max-tokens must be >= --min-tokens".into()));
    }

    let corpus = generate(&config);
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    let dataset_path = args.out.join("dataset.json");
    corpus
        .dataset
        .save(&dataset_path)
        .map_err(|e| CliError::from_data(e, "dataset"))?;
    let annotations_path = args.out.join("annotations.jsonl");
    save_annotations(&annotations_path, &corpus.annotations)
        .map_err(|e| CliError::from_data(e, "annotations"))?;

    let mut manifest = Manifest::new("generate");
    manifest.set("examples", config.examples);
    manifest.set("seed", config.seed);
    manifest.set("min-tokens", config.min_tokens);
    manifest.set("max-tokens", config.max_tokens);
    if let Some(config_path) = &args.config {
        manifest.add_input(config_path)?;
    }
    manifest.write(&args.out)?;

    println!(
        "wrote {} examples -> {} (+ annotations.jsonl)",
        corpus.dataset.examples.len(),
        dataset_path.display()
    );
    Ok(())
}
