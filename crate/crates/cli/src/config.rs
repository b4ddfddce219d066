//! Layered run configuration: flags override a TOML config file, the
//! config file overrides built-in defaults. Unknown keys in the file
//! are rejected. The resolved values land in the manifest.

use std::fs;
use std::path::Path;

use rationale_core::model::ModelKind;
use rationale_core::pipeline::RankingStrategy;
use rationale_core::rationale::FlipMode;
use serde::Deserialize;

use crate::errors::CliError;

/// Optional settings a TOML config file may provide. Every field has a
/// flag of the same (kebab-case) name; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub examples: Option<usize>,
    pub min_tokens: Option<usize>,
    pub max_tokens: Option<usize>,
    pub model: Option<ModelKind>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub holdout: Option<usize>,
    pub ig_steps: Option<usize>,
    pub flip: Option<FlipMode>,
    pub ranking: Option<RankingStrategy>,
    pub answer_span: Option<AnswerSpanChoice>,
    pub include_predicted_answer: Option<bool>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub limit: Option<usize>,
}

impl FileConfig {
    /// Load a config file, or the empty config when no path is given.
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let config: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive_usize = [
            ("examples", self.examples),
            ("min-tokens", self.min_tokens),
            ("max-tokens", self.max_tokens),
            ("dim", self.dim),
            ("epochs", self.epochs),
            ("batch-size", self.batch_size),
            ("ig-steps", self.ig_steps),
            ("jobs", self.jobs),
            ("limit", self.limit),
        ];
        for (name, value) in positive_usize {
            if value == Some(0) {
                return Err(CliError::Usage(format!("config: {name} must be positive")));
            }
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(CliError::Usage("config: learning-rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Answer-span handling for evaluation: one mode or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerSpanChoice {
    Include,
    Exclude,
    Both,
}

pub fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

pub fn parse_flip(s: &str) -> Result<FlipMode, String> {
    match s {
        "prediction-change" => Ok(FlipMode::PredictionChange),
        "gold-mismatch" => Ok(FlipMode::GoldMismatch),
        other => Err(format!("{other:?} (expected prediction-change or gold-mismatch)")),
    }
}

pub fn parse_ranking(s: &str) -> Result<RankingStrategy, String> {
    match s {
        "ig" => Ok(RankingStrategy::Ig),
        "random" => Ok(RankingStrategy::Random),
        other => Err(format!("{other:?} (expected ig or random)")),
    }
}

pub fn parse_answer_span(s: &str) -> Result<AnswerSpanChoice, String> {
    match s {
        "include" => Ok(AnswerSpanChoice::Include),
        "exclude" => Ok(AnswerSpanChoice::Exclude),
        "both" => Ok(AnswerSpanChoice::Both),
        other => Err(format!("{other:?} (expected include, exclude, or both)")),
    }
}

/// Flag value, then config-file value, then default.
pub fn resolve<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
