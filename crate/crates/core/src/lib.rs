//! Core library for gradient-based rationale extraction on
//! reading-comprehension QA.
//!
//! The pieces, bottom to top:
//!
//! * [`autodiff`] — reverse-mode automatic differentiation over a tape.
//! * [`data`] — tokenization, dataset/annotation loading, and a
//!   synthetic corpus generator with known gold rationales.
//! * [`model`] — small trainable span-prediction models built on the
//!   tape.
//! * [`attribution`] — integrated-gradients importance scores for
//!   passage words.
//! * [`rationale`] — greedy decision-flip rationale extraction from an
//!   importance ranking.
//! * [`eval`] — flip-fraction statistics and rationale/annotation
//!   overlap scoring.
//! * [`pipeline`] — per-example orchestration of attribute + extract.
//! * [`report`] — plain-text tables and marked-up rationale rendering.

pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod rationale;
pub mod report;

pub use autodiff::{finite_difference_gradient, DiffError, Gradients, Graph, NodeId, Tensor};
pub use data::{tokenize, Dataset, HumanRationale, QaExample, Span, Token, TokenizedText};
pub use model::{ModelKind, QaModel, SpanPrediction, SpanTarget, TrainConfig};
