//! Per-example orchestration: predict, attribute, extract.
//!
//! [`process_example`] runs the full chain for one example — original
//! prediction, integrated-gradients importance over passage words,
//! greedy decision-flip extraction — and returns everything downstream
//! consumers need (dump writers, evaluation, reports).
//! [`process_dataset`] fans the same work out across a dataset in
//! parallel with deterministic, order-preserving results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    integrated_gradients, zero_baseline, AttributionConfig, AttributionError,
};
use crate::data::{tokenize, Dataset, QaExample, Span};
use crate::model::{ModelError, QaModel, SpanTarget};
use crate::rationale::{
    extract, random_ranking, rank_by_weights, FlipMode, Rationale, RationaleError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Rationale(#[from] RationaleError),
    #[error("example {id}: {detail}")]
    Example { id: String, detail: String },
}

/// Where the removal order comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingStrategy {
    /// Integrated-gradients importance, highest first.
    Ig,
    /// Seeded uniform shuffle — the control arm.
    Random,
}

/// Everything configurable about the per-example chain.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub attribution: AttributionConfig,
    pub target: SpanTarget,
    pub flip: FlipMode,
    pub ranking: RankingStrategy,
    /// Base seed; random rankings derive a per-example seed from it and
    /// the example id, so results do not depend on dataset order.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            attribution: AttributionConfig::default(),
            target: SpanTarget::LogProb,
            flip: FlipMode::PredictionChange,
            ranking: RankingStrategy::Ig,
            seed: 42,
        }
    }
}

/// Attribution numbers worth keeping per example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionSummary {
    /// Normalized per-word importance (sums to 1).
    pub importance: Vec<f64>,
    /// Raw attribution-vector norms per word.
    pub norms: Vec<f64>,
    pub degenerate: bool,
    pub completeness_gap: f64,
    pub relative_gap: f64,
    pub target_at_input: f64,
    pub target_at_baseline: f64,
    pub steps: usize,
}

/// Full per-example result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleRationale {
    pub example_id: String,
    /// Passage tokens, so dumps are readable without re-tokenizing.
    pub words: Vec<String>,
    /// `None` when the ranking strategy never ran attribution.
    pub attribution: Option<AttributionSummary>,
    /// Removal order actually used.
    pub ranking: Vec<usize>,
    pub indicators: Vec<usize>,
    pub flipped: bool,
    pub fraction: f64,
    pub original_span: Span,
    pub final_span: Span,
    pub gold_span: Option<Span>,
}

impl ExampleRationale {
    /// The rationale words themselves, in removal order.
    pub fn indicator_words(&self) -> Vec<String> {
        self.indicators.iter().map(|&i| self.words[i].clone()).collect()
    }
}

/// Stable per-example seed: FNV-1a over the id, mixed with the base
/// seed through a splitmix round so nearby bases decorrelate.
pub fn example_seed(base: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in id.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run the full chain for one example.
pub fn process_example(
    model: &QaModel,
    example: &QaExample,
    config: &PipelineConfig,
) -> Result<ExampleRationale, PipelineError> {
    let tokens = tokenize(&example.passage);
    if tokens.is_empty() {
        return Err(PipelineError::Example {
            id: example.id.clone(),
            detail: "empty passage".into(),
        });
    }
    let words = tokens.words();
    let gold_span = example.answer_span(&tokens);
    let passage_emb = model.embed_words(&words);
    let question_emb = model.embed_text(&example.question);

    let original = model.predict_from_embeddings(&passage_emb, &question_emb)?;

    let (ranking, attribution) = match config.ranking {
        RankingStrategy::Ig => {
            let baseline = zero_baseline(&passage_emb);
            let att = integrated_gradients(
                |point| {
                    model.target_gradient(point, &question_emb, original.span, config.target)
                },
                &passage_emb,
                &baseline,
                &config.attribution,
            )?;
            let ranking = rank_by_weights(&att.importance);
            let relative_gap = att.relative_gap();
            let summary = AttributionSummary {
                importance: att.importance,
                norms: att.norms,
                degenerate: att.degenerate,
                completeness_gap: att.completeness_gap,
                relative_gap,
                target_at_input: att.target_at_input,
                target_at_baseline: att.target_at_baseline,
                steps: config.attribution.steps,
            };
            (ranking, Some(summary))
        }
        RankingStrategy::Random => {
            (random_ranking(words.len(), example_seed(config.seed, &example.id)), None)
        }
    };

    let reference = match config.flip {
        FlipMode::PredictionChange => original.span,
        FlipMode::GoldMismatch => gold_span.ok_or_else(|| PipelineError::Example {
            id: example.id.clone(),
            detail: "gold-mismatch flips need an alignable gold answer".into(),
        })?,
    };

    let mut working = passage_emb;
    let rationale: Rationale = extract(&ranking, original.span, reference, |pos| {
        for value in &mut working[pos] {
            *value = 0.0;
        }
        Ok(model.predict_from_embeddings(&working, &question_emb)?.span)
    })?;

    Ok(ExampleRationale {
        example_id: example.id.clone(),
        words,
        attribution,
        ranking,
        indicators: rationale.indicators,
        flipped: rationale.flipped,
        fraction: rationale.fraction,
        original_span: rationale.original_span,
        final_span: rationale.final_span,
        gold_span,
    })
}

/// Run the chain over a whole dataset, in parallel. Results come back in
/// dataset order and are bit-identical across thread counts.
pub fn process_dataset(
    model: &QaModel,
    dataset: &Dataset,
    config: &PipelineConfig,
) -> Result<Vec<ExampleRationale>, PipelineError> {
    dataset.examples.par_iter().map(|ex| process_example(model, ex, config)).collect()
}
