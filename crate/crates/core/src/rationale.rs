//! Greedy decision-flip rationale extraction.
//!
//! Given an importance ranking over passage words, remove words in rank
//! order — removal means zeroing the word's embedding — re-running the
//! model after each removal, until the predicted span no longer matches
//! a reference span. The removed words are the rationale: a minimal-ish
//! set whose deletion changes the decision. The ranking is computed once
//! up front and never refreshed during removal.
//!
//! The flip fraction (removed words / passage words) lies in `(0, 1]`:
//! at least one word is always removed, and a passage that never flips
//! ends with every word removed, fraction exactly 1, and `flipped`
//! false.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Span;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum RationaleError {
    #[error("ranking is not a permutation: {0}")]
    BadRanking(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What counts as a decision flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipMode {
    /// The prediction moved away from the model's original answer.
    PredictionChange,
    /// The prediction moved away from the gold answer.
    GoldMismatch,
}

/// One extracted rationale.
#[derive(Debug, Clone, PartialEq)]
pub struct Rationale {
    /// Removed positions, in removal order. The rationale proper.
    pub indicators: Vec<usize>,
    /// Whether removal ever flipped the decision.
    pub flipped: bool,
    /// `indicators.len() / passage_len`, in `(0, 1]`.
    pub fraction: f64,
    /// Prediction before any removal.
    pub original_span: Span,
    /// Prediction after the last removal.
    pub final_span: Span,
}

/// Positions sorted by weight, highest first; ties break toward the
/// earlier position.
pub fn rank_by_weights(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

/// A seeded uniformly-random ranking — the control arm for comparing
/// against attribution-based rankings.
pub fn random_ranking(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Run the greedy removal loop.
///
/// `ranking` must be a permutation of `0..n`. `reference` is the span a
/// flip is measured against: the original prediction for
/// [`FlipMode::PredictionChange`], the gold span for
/// [`FlipMode::GoldMismatch`]. `remove_and_predict` zeroes one more
/// word's embedding (cumulatively) and returns the new prediction.
pub fn extract<F>(
    ranking: &[usize],
    original_span: Span,
    reference: Span,
    mut remove_and_predict: F,
) -> Result<Rationale, RationaleError>
where
    F: FnMut(usize) -> Result<Span, ModelError>,
{
    let n = ranking.len();
    if n == 0 {
        return Err(RationaleError::BadRanking("empty".into()));
    }
    let mut seen = vec![false; n];
    for &pos in ranking {
        if pos >= n {
            return Err(RationaleError::BadRanking(format!(
                "position {pos} out of range for length {n}"
            )));
        }
        if std::mem::replace(&mut seen[pos], true) {
            return Err(RationaleError::BadRanking(format!("position {pos} repeats")));
        }
    }

    let mut indicators = Vec::new();
    let mut flipped = false;
    let mut final_span = original_span;
    for &pos in ranking {
        final_span = remove_and_predict(pos)?;
        indicators.push(pos);
        if final_span != reference {
            flipped = true;
            break;
        }
    }
    let fraction = indicators.len() as f64 / n as f64;
    Ok(Rationale { indicators, flipped, fraction, original_span, final_span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(s: usize, e: usize) -> Span {
        Span::new(s, e)
    }

    /// Stub predictor that keeps answering `stable` until `flip_after`
    /// removals have happened, then answers `other`.
    fn stub(
        stable: Span,
        other: Span,
        flip_after: usize,
    ) -> impl FnMut(usize) -> Result<Span, ModelError> {
        let mut removed = 0;
        move |_pos| {
            removed += 1;
            Ok(if removed >= flip_after { other } else { stable })
        }
    }

    #[test]
    fn ranking_orders_by_weight_with_positional_tie_break() {
        assert_eq!(rank_by_weights(&[3.0, 1.0, 3.0, 2.0]), vec![0, 2, 3, 1]);
        assert_eq!(rank_by_weights(&[]), Vec::<usize>::new());
        assert_eq!(rank_by_weights(&[0.5, 0.5, 0.5]), vec![0, 1, 2]);
    }

    #[test]
    fn removal_stops_at_the_first_flip() {
        let ranking = vec![4, 1, 3, 0, 2];
        let r = extract(&ranking, span(2, 2), span(2, 2), stub(span(2, 2), span(0, 0), 3)).unwrap();
        assert!(r.flipped);
        assert_eq!(r.indicators, vec![4, 1, 3]);
        assert!((r.fraction - 0.6).abs() < 1e-12);
        assert_eq!(r.final_span, span(0, 0));
        assert_eq!(r.original_span, span(2, 2));
    }

    #[test]
    fn first_removal_flip_gives_the_smallest_nonzero_fraction() {
        let ranking = vec![0, 1, 2, 3];
        let r = extract(&ranking, span(1, 1), span(1, 1), stub(span(1, 1), span(3, 3), 1)).unwrap();
        assert!(r.flipped);
        assert_eq!(r.indicators, vec![0]);
        assert!((r.fraction - 0.25).abs() < 1e-12);
    }

    #[test]
    fn never_flipping_removes_everything_with_fraction_one() {
        let ranking = vec![2, 0, 1];
        let r = extract(&ranking, span(0, 0), span(0, 0), stub(span(0, 0), span(0, 0), usize::MAX))
            .unwrap();
        assert!(!r.flipped);
        assert_eq!(r.indicators, vec![2, 0, 1]);
        assert_eq!(r.fraction, 1.0);
        assert_eq!(r.final_span, span(0, 0));
    }

    #[test]
    fn gold_mismatch_reference_flips_against_the_gold_span() {
        // prediction never equals gold, so the very first removal "flips"
        let ranking = vec![0, 1];
        let gold = span(5, 5);
        let r = extract(&ranking, span(1, 1), gold, stub(span(1, 1), span(1, 1), usize::MAX))
            .unwrap();
        assert!(r.flipped);
        assert_eq!(r.indicators, vec![0]);
    }

    #[test]
    fn malformed_rankings_are_rejected() {
        let pred = |_pos: usize| Ok(span(0, 0));
        assert!(matches!(
            extract(&[0, 0, 1], span(0, 0), span(0, 0), pred),
            Err(RationaleError::BadRanking(_))
        ));
        let pred = |_pos: usize| Ok(span(0, 0));
        assert!(matches!(
            extract(&[0, 3], span(0, 0), span(0, 0), pred),
            Err(RationaleError::BadRanking(_))
        ));
        let pred = |_pos: usize| Ok(span(0, 0));
        assert!(matches!(
            extract(&[], span(0, 0), span(0, 0), pred),
            Err(RationaleError::BadRanking(_))
        ));
    }

    #[test]
    fn random_rankings_are_seeded_permutations() {
        let a = random_ranking(20, 7);
        let b = random_ranking(20, 7);
        let c = random_ranking(20, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn extraction_invariants_hold_for_arbitrary_flip_points(
            weights in proptest::collection::vec(-10.0f64..10.0, 1..40),
            flip_after in 1usize..50,
        ) {
            let ranking = rank_by_weights(&weights);
            let n = weights.len();
            let original = span(0, 0);
            let r = extract(&ranking, original, original, stub(original, span(1, 1), flip_after))
                .unwrap();
            // the rationale is always a nonempty prefix of the ranking
            prop_assert!(!r.indicators.is_empty());
            prop_assert_eq!(&r.indicators[..], &ranking[..r.indicators.len()]);
            // fraction in (0, 1]
            prop_assert!(r.fraction > 0.0 && r.fraction <= 1.0);
            // flipped iff the stub fired before words ran out
            prop_assert_eq!(r.flipped, flip_after <= n);
            if r.flipped {
                prop_assert_eq!(r.indicators.len(), flip_after);
                prop_assert!(r.final_span != original);
            } else {
                prop_assert_eq!(r.indicators.len(), n);
                prop_assert_eq!(r.fraction, 1.0);
            }
        }

        #[test]
        fn rankings_are_weight_sorted_permutations(
            weights in proptest::collection::vec(-1.0f64..1.0, 0..60),
        ) {
            let ranking = rank_by_weights(&weights);
            let mut sorted = ranking.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..weights.len()).collect::<Vec<_>>());
            for pair in ranking.windows(2) {
                prop_assert!(weights[pair[0]] >= weights[pair[1]]);
                if weights[pair[0]] == weights[pair[1]] {
                    prop_assert!(pair[0] < pair[1]);
                }
            }
        }
    }
}
