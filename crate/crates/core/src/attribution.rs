//! Integrated-gradients attribution over passage word embeddings.
//!
//! For a scalar target `f`, input embeddings `x`, and baseline `x̃`, the
//! attribution to coordinate `i` is
//!
//! ```text
//! IG_i = (x_i − x̃_i) · (1/m) Σ_{k=1..m} ∂f/∂x_i (x̃ + α_k (x − x̃))
//! ```
//!
//! with the midpoint rule `α_k = (k − 0.5) / m`. Gradients are exact
//! (reverse-mode), so the only approximation is the path integral
//! itself; the completeness identity `Σ IG = f(x) − f(x̃)` holds up to
//! that quadrature error, which the result reports as a gap.
//!
//! The baseline for passage words is the zero embedding, and the target
//! closure is expected to hold the question fixed — only passage
//! embeddings move along the path.

use thiserror::Error;

use crate::model::ModelError;

/// Below this total mass, per-word importance is considered degenerate
/// and falls back to uniform.
const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("input has {input} positions but baseline has {baseline}")]
    BaselineShape { input: usize, baseline: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Attribution settings. `Default` is the canonical configuration used
/// everywhere: 50 steps, attributions scaled by the input delta.
#[derive(Debug, Clone)]
pub struct AttributionConfig {
    /// Number of quadrature steps `m`.
    pub steps: usize,
    /// Multiply the averaged path gradient by `(x − x̃)`. Disabling this
    /// leaves the raw averaged gradient, which ranks coordinates the
    /// same way only when all input deltas share a scale; completeness
    /// is not meaningful for it.
    pub scale_by_input_delta: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { steps: 50, scale_by_input_delta: true }
    }
}

/// Result of one attribution run over a passage.
#[derive(Debug, Clone)]
pub struct Attribution {
    /// Per-position, per-dimension attributions.
    pub scores: Vec<Vec<f64>>,
    /// Euclidean norm of each position's attribution vector.
    pub norms: Vec<f64>,
    /// Norms normalized to sum to one — the word importance ranking.
    /// Uniform when `degenerate` is set.
    pub importance: Vec<f64>,
    /// True when every attribution was (numerically) zero, e.g. because
    /// the input already equals the baseline.
    pub degenerate: bool,
    /// Target value at the input.
    pub target_at_input: f64,
    /// Target value at the baseline.
    pub target_at_baseline: f64,
    /// Signed completeness residual `Σ scores − (f(x) − f(x̃))`.
    pub completeness_gap: f64,
}

impl Attribution {
    /// Completeness gap relative to the target delta, guarding tiny
    /// denominators.
    pub fn relative_gap(&self) -> f64 {
        let delta = (self.target_at_input - self.target_at_baseline).abs();
        self.completeness_gap.abs() / delta.max(1e-9)
    }
}

/// What a target function reports at one point: the scalar value and its
/// gradient with respect to every embedding coordinate.
pub type TargetEvaluation = (f64, Vec<Vec<f64>>);

/// Integrated gradients of `target` from `baseline` to `input`.
///
/// `target` maps passage embeddings to the scalar of interest and its
/// gradient; it is called `steps` times along the path plus once at each
/// endpoint.
pub fn integrated_gradients<F>(
    mut target: F,
    input: &[Vec<f64>],
    baseline: &[Vec<f64>],
    config: &AttributionConfig,
) -> Result<Attribution, AttributionError>
where
    F: FnMut(&[Vec<f64>]) -> Result<TargetEvaluation, ModelError>,
{
    if config.steps == 0 {
        return Err(AttributionError::NoSteps);
    }
    if input.is_empty() {
        return Err(AttributionError::EmptyInput);
    }
    if input.len() != baseline.len()
        || input.iter().zip(baseline).any(|(a, b)| a.len() != b.len())
    {
        return Err(AttributionError::BaselineShape {
            input: input.len(),
            baseline: baseline.len(),
        });
    }

    let m = config.steps;
    let mut avg_grad: Vec<Vec<f64>> = input.iter().map(|row| vec![0.0; row.len()]).collect();
    let mut point: Vec<Vec<f64>> = baseline.to_vec();
    for k in 1..=m {
        let alpha = (k as f64 - 0.5) / m as f64;
        for (p, (x, b)) in point.iter_mut().zip(input.iter().zip(baseline)) {
            for (pv, (xv, bv)) in p.iter_mut().zip(x.iter().zip(b)) {
                *pv = bv + alpha * (xv - bv);
            }
        }
        let (_, grad) = target(&point)?;
        for (acc, g) in avg_grad.iter_mut().zip(&grad) {
            for (a, gv) in acc.iter_mut().zip(g) {
                *a += gv;
            }
        }
    }
    for row in &mut avg_grad {
        for a in row.iter_mut() {
            *a /= m as f64;
        }
    }

    let scores: Vec<Vec<f64>> = if config.scale_by_input_delta {
        avg_grad
            .iter()
            .zip(input.iter().zip(baseline))
            .map(|(g, (x, b))| {
                g.iter().zip(x.iter().zip(b)).map(|(gv, (xv, bv))| gv * (xv - bv)).collect()
            })
            .collect()
    } else {
        avg_grad
    };

    let (target_at_input, _) = target(input)?;
    let (target_at_baseline, _) = target(baseline)?;
    let total: f64 = scores.iter().flatten().sum();
    let completeness_gap = total - (target_at_input - target_at_baseline);

    let norms: Vec<f64> =
        scores.iter().map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mass: f64 = norms.iter().sum();
    let (importance, degenerate) = if mass < DEGENERATE_EPS {
        (vec![1.0 / norms.len() as f64; norms.len()], true)
    } else {
        (norms.iter().map(|n| n / mass).collect(), false)
    };

    Ok(Attribution {
        scores,
        norms,
        importance,
        degenerate,
        target_at_input,
        target_at_baseline,
        completeness_gap,
    })
}

/// The canonical all-zeros baseline with the same shape as `input`.
pub fn zero_baseline(input: &[Vec<f64>]) -> Vec<Vec<f64>> {
    input.iter().map(|row| vec![0.0; row.len()]).collect()
}
