//! Trainable span-prediction models built on the autodiff tape.
//!
//! Both model kinds score every passage position for answer-start and
//! answer-end and put a softmax over each. The shared skeleton:
//!
//! * mean-pool the question embeddings into a query vector,
//! * score each passage word by gated cosine similarity to the query
//!   (cosine alone is blind to vector magnitude, so a soft norm gate
//!   makes the score fall to zero at the zero vector — which is what
//!   keeps zero-baseline attribution paths informative),
//! * summarize the passage by similarity-weighted attention,
//! * feed each position's features into linear start/end heads. A
//!   position's features are its embedding, one adjacent embedding (the
//!   previous token for the start head, the next for the end head —
//!   boundary detection needs to see both sides of the boundary), the
//!   attention summary, and a trailing window of similarity scores.
//!
//! `cosine-lite` applies the heads directly; `dense-lite` first maps the
//! query through a learned matrix and routes features through a small
//! tanh layer.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{DiffError, Graph, NodeId, Tensor};
use crate::data::{tokenize, Dataset, QaExample, Span};

/// Multiplier on gated similarities before they enter the attention
/// softmax and the head features.
pub const SIM_GAIN: f64 = 4.0;
/// Norm-gate knee: gate(r) = r / (r + SIM_TAU).
pub const SIM_TAU: f64 = 0.25;
/// How many trailing similarity scores each position's features carry
/// (its own plus three preceding).
pub const SIM_WINDOW: usize = 4;
/// Longest answer span the decoder will emit, in tokens.
pub const MAX_ANSWER_LEN: usize = 8;

const CHECKPOINT_VERSION: u32 = 1;
/// Vocabulary row reserved for out-of-vocabulary words.
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("example {id}: {detail}")]
    Example { id: String, detail: String },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse checkpoint {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
}

/// Which span predictor to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CosineLite,
    DenseLite,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::CosineLite => "cosine-lite",
            ModelKind::DenseLite => "dense-lite",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine-lite" => Ok(ModelKind::CosineLite),
            "dense-lite" => Ok(ModelKind::DenseLite),
            other => Err(ModelError::Invalid {
                what: "model kind",
                detail: format!("{other:?} (expected cosine-lite or dense-lite)"),
            }),
        }
    }
}

/// Scalar the attribution machinery differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanTarget {
    /// log p_start(s) + log p_end(e) — the default.
    LogProb,
    /// Raw start logit at s plus raw end logit at e.
    LogitSum,
}

/// Decoded answer span with its joint probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub span: Span,
    pub score: f64,
}

/// SGD settings. `Default` is the canonical recipe used by the tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seed for the per-epoch shuffle (independent of the model seed).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 32, learning_rate: 0.05, seed: 42 }
    }
}

/// Mean full-set loss before training and after each epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

/// Gradients of one example's loss, keyed the same way the model stores
/// its state: named parameter tensors plus embedding-table rows.
#[derive(Debug)]
pub struct ModelGradients {
    pub params: BTreeMap<String, Tensor>,
    pub embedding_rows: BTreeMap<usize, Vec<f64>>,
}

/// A span-prediction model: vocabulary, embedding table, and named
/// parameter tensors. Everything is `f64` and fully deterministic given
/// (kind, dim, seed, vocabulary).
#[derive(Debug, Clone)]
pub struct QaModel {
    kind: ModelKind,
    dim: usize,
    seed: u64,
    vocab: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    params: BTreeMap<String, Tensor>,
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, half_range: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-half_range..half_range)).collect()
}

impl QaModel {
    /// Build a fresh model whose vocabulary is every word of every
    /// passage and question in `corpus`.
    pub fn init(kind: ModelKind, dim: usize, seed: u64, corpus: &Dataset) -> Result<Self, ModelError> {
        let mut words: Vec<String> = corpus
            .examples
            .iter()
            .flat_map(|ex| {
                tokenize(&ex.passage).words().into_iter().chain(tokenize(&ex.question).words())
            })
            .collect();
        words.sort_unstable();
        words.dedup();
        Self::from_vocab(kind, dim, seed, words)
    }

    /// Build a fresh model over an explicit word list. The list is
    /// sorted and deduplicated, and the reserved `<unk>` row is prepended.
    pub fn from_vocab(
        kind: ModelKind,
        dim: usize,
        seed: u64,
        mut words: Vec<String>,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::Invalid { what: "dim", detail: "must be positive".into() });
        }
        words.retain(|w| w != UNK);
        words.sort_unstable();
        words.dedup();
        let mut vocab = Vec::with_capacity(words.len() + 1);
        vocab.push(UNK.to_string());
        vocab.extend(words);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let embeddings: Vec<Vec<f64>> =
            (0..vocab.len()).map(|_| uniform_vec(&mut rng, dim, half)).collect();

        let feat = 3 * dim + SIM_WINDOW;
        let mut params = BTreeMap::new();
        match kind {
            ModelKind::CosineLite => {
                let half_f = 0.5 / feat as f64;
                params.insert(
                    "start_head".into(),
                    Tensor::vector(uniform_vec(&mut rng, feat, half_f)),
                );
                params.insert("start_bias".into(), Tensor::scalar(0.0));
                params
                    .insert("end_head".into(), Tensor::vector(uniform_vec(&mut rng, feat, half_f)));
                params.insert("end_bias".into(), Tensor::scalar(0.0));
            }
            ModelKind::DenseLite => {
                let hidden = Self::hidden_dim(dim);
                // identity-plus-noise start so the learned query map
                // begins as plain cosine similarity
                let mut bilinear = uniform_vec(&mut rng, dim * dim, half);
                for i in 0..dim {
                    bilinear[i * dim + i] += 1.0;
                }
                params.insert(
                    "bilinear".into(),
                    Tensor::from_vec(vec![dim, dim], bilinear).expect("square matrix"),
                );
                let half_f = 0.5 / feat as f64;
                params.insert(
                    "hidden_w".into(),
                    Tensor::from_vec(vec![hidden, feat], uniform_vec(&mut rng, hidden * feat, half_f))
                        .expect("hidden matrix"),
                );
                params.insert("hidden_b".into(), Tensor::vector(vec![0.0; hidden]));
                let half_h = 0.5 / hidden as f64;
                params.insert(
                    "start_head".into(),
                    Tensor::vector(uniform_vec(&mut rng, hidden, half_h)),
                );
                params.insert("start_bias".into(), Tensor::scalar(0.0));
                params
                    .insert("end_head".into(), Tensor::vector(uniform_vec(&mut rng, hidden, half_h)));
                params.insert("end_bias".into(), Tensor::scalar(0.0));
            }
        }
        Ok(QaModel { kind, dim, seed, vocab, embeddings, params })
    }

    fn hidden_dim(dim: usize) -> usize {
        (dim / 4).max(4)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// Replace one parameter tensor; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let current = self.params.get(name).ok_or_else(|| ModelError::Invalid {
            what: "parameter name",
            detail: name.to_string(),
        })?;
        if current.shape() != value.shape() {
            return Err(ModelError::Invalid {
                what: "parameter shape",
                detail: format!("{name}: {:?} vs {:?}", current.shape(), value.shape()),
            });
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Vocabulary row for a word (`<unk>`'s row when absent).
    pub fn vocab_index(&self, word: &str) -> usize {
        // row 0 is <unk>; the rest of the vocabulary is sorted
        self.vocab[1..].binary_search_by(|w| w.as_str().cmp(word)).map(|i| i + 1).unwrap_or(0)
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        &self.embeddings[row]
    }

    pub fn set_embedding(&mut self, row: usize, values: Vec<f64>) -> Result<(), ModelError> {
        if values.len() != self.dim {
            return Err(ModelError::Invalid {
                what: "embedding length",
                detail: format!("row {row}: {} vs dim {}", values.len(), self.dim),
            });
        }
        self.embeddings[row] = values;
        Ok(())
    }

    /// SHA-256 of the vocabulary, newline-delimited — the checkpoint
    /// integrity check.
    pub fn vocab_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for word in &self.vocab {
            hasher.update(word.as_bytes());
            hasher.update(b"\n");
        }
        format!("{:x}", hasher.finalize())
    }

    /// Embedding vectors for a word sequence, in order.
    pub fn embed_words(&self, words: &[String]) -> Vec<Vec<f64>> {
        words.iter().map(|w| self.embeddings[self.vocab_index(w)].clone()).collect()
    }

    /// Tokenize and embed a raw string.
    pub fn embed_text(&self, text: &str) -> Vec<Vec<f64>> {
        self.embed_words(&tokenize(text).words())
    }

    /// Predict the answer span for raw passage/question strings.
    pub fn predict(&self, passage: &str, question: &str) -> Result<SpanPrediction, ModelError> {
        self.predict_from_embeddings(&self.embed_text(passage), &self.embed_text(question))
    }

    /// Predict from explicit embedding matrices. This is the entry point
    /// the rationale extractor uses to re-run the model with selected
    /// word embeddings zeroed out.
    pub fn predict_from_embeddings(
        &self,
        passage: &[Vec<f64>],
        question: &[Vec<f64>],
    ) -> Result<SpanPrediction, ModelError> {
        let g = Graph::new();
        let p_nodes = self.input_nodes(&g, passage, false)?;
        let q_nodes = self.input_nodes(&g, question, false)?;
        let params = self.param_nodes(&g, false);
        let parts = self.forward(&g, &p_nodes, &q_nodes, &params)?;
        let start = g.value(parts.start_probs);
        let end = g.value(parts.end_probs);
        Ok(decode_span(start.data(), end.data(), MAX_ANSWER_LEN))
    }

    /// Value and gradient of the attribution target at the given passage
    /// embeddings, holding the question fixed.
    ///
    /// Returns the target scalar and one gradient vector per passage
    /// position.
    pub fn target_gradient(
        &self,
        passage: &[Vec<f64>],
        question: &[Vec<f64>],
        span: Span,
        target: SpanTarget,
    ) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
        if span.end >= passage.len() {
            return Err(ModelError::Invalid {
                what: "target span",
                detail: format!("{:?} out of range for {} positions", span, passage.len()),
            });
        }
        let g = Graph::new();
        let p_nodes = self.input_nodes(&g, passage, true)?;
        let q_nodes = self.input_nodes(&g, question, false)?;
        let params = self.param_nodes(&g, false);
        let parts = self.forward(&g, &p_nodes, &q_nodes, &params)?;
        let root = match target {
            SpanTarget::LogProb => {
                let ls = g.scalar_pick(g.log(parts.start_probs)?, span.start)?;
                let le = g.scalar_pick(g.log(parts.end_probs)?, span.end)?;
                g.add(ls, le)?
            }
            SpanTarget::LogitSum => {
                let ls = g.scalar_pick(parts.start_logits, span.start)?;
                let le = g.scalar_pick(parts.end_logits, span.end)?;
                g.add(ls, le)?
            }
        };
        let value = g.value_scalar(root);
        let grads = g.backward(root)?;
        let gradient = p_nodes
            .iter()
            .map(|&id| grads.wrt(id).expect("passage leaf").data().to_vec())
            .collect();
        Ok((value, gradient))
    }

    /// Loss of one example under the current parameters.
    pub fn example_loss(&self, example: &QaExample) -> Result<f64, ModelError> {
        let prepared = self.prepare(example)?;
        let (loss, _) = self.loss_graph(&prepared, false)?;
        Ok(loss)
    }

    /// Loss and its gradients for one example — the unit of SGD, exposed
    /// for gradient checking.
    pub fn loss_and_gradients(
        &self,
        example: &QaExample,
    ) -> Result<(f64, ModelGradients), ModelError> {
        let prepared = self.prepare(example)?;
        let (loss, grads) = self.loss_graph(&prepared, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }

    /// Mean loss over a dataset.
    pub fn mean_loss(&self, dataset: &Dataset) -> Result<f64, ModelError> {
        if dataset.examples.is_empty() {
            return Err(ModelError::EmptyInput("dataset"));
        }
        let losses: Result<Vec<f64>, ModelError> =
            dataset.examples.par_iter().map(|ex| self.example_loss(ex)).collect();
        let losses = losses?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Fraction of examples whose predicted span equals the gold span.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64, ModelError> {
        if dataset.examples.is_empty() {
            return Err(ModelError::EmptyInput("dataset"));
        }
        let hits: Result<Vec<bool>, ModelError> = dataset
            .examples
            .par_iter()
            .map(|ex| {
                let prepared = self.prepare(ex)?;
                let pred = self.predict(&ex.passage, &ex.question)?;
                Ok(pred.span == prepared.gold)
            })
            .collect();
        let hits = hits?;
        Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }

    /// Minibatch SGD over the dataset. Returns the loss trace: mean
    /// full-set loss before training, then after each epoch.
    pub fn train(&mut self, dataset: &Dataset, config: &TrainConfig) -> Result<TrainTrace, ModelError> {
        if dataset.examples.is_empty() {
            return Err(ModelError::EmptyInput("training set"));
        }
        if config.batch_size == 0 {
            return Err(ModelError::Invalid { what: "batch_size", detail: "must be positive".into() });
        }
        if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
            return Err(ModelError::Invalid {
                what: "learning_rate",
                detail: config.learning_rate.to_string(),
            });
        }
        let prepared: Vec<Prepared> =
            dataset.examples.iter().map(|ex| self.prepare(ex)).collect::<Result<_, _>>()?;

        let mut trace = vec![self.mean_loss(dataset)?];
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                self.sgd_step(&prepared, batch, config.learning_rate)?;
            }
            trace.push(self.mean_loss(dataset)?);
        }
        Ok(TrainTrace { losses: trace })
    }

    fn sgd_step(
        &mut self,
        prepared: &[Prepared],
        batch: &[usize],
        learning_rate: f64,
    ) -> Result<(), ModelError> {
        // examples differentiate in parallel; the sums below run in batch
        // order so results do not depend on thread scheduling
        let grads: Result<Vec<ModelGradients>, ModelError> = batch
            .par_iter()
            .map(|&idx| Ok(self.loss_graph(&prepared[idx], true)?.1.expect("gradients requested")))
            .collect();
        let grads = grads?;

        let scale = learning_rate / batch.len() as f64;
        let mut param_acc: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut row_acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for g in grads {
            for (name, tensor) in g.params {
                match param_acc.get_mut(&name) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(tensor.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        param_acc.insert(name, tensor);
                    }
                }
            }
            for (row, grad) in g.embedding_rows {
                match row_acc.get_mut(&row) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&grad) {
                            *a += b;
                        }
                    }
                    None => {
                        row_acc.insert(row, grad);
                    }
                }
            }
        }

        for (name, grad) in param_acc {
            let param = self.params.get_mut(&name).expect("gradient matches a parameter");
            for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                *p -= scale * g;
            }
        }
        for (row, grad) in row_acc {
            for (e, g) in self.embeddings[row].iter_mut().zip(&grad) {
                *e -= scale * g;
            }
        }
        Ok(())
    }

    fn prepare(&self, example: &QaExample) -> Result<Prepared, ModelError> {
        let passage_tokens = tokenize(&example.passage);
        let gold = example.answer_span(&passage_tokens).ok_or_else(|| ModelError::Example {
            id: example.id.clone(),
            detail: "gold answer does not align to token positions".into(),
        })?;
        let passage_rows: Vec<usize> =
            passage_tokens.tokens.iter().map(|t| self.vocab_index(&t.text)).collect();
        let question_rows: Vec<usize> =
            tokenize(&example.question).tokens.iter().map(|t| self.vocab_index(&t.text)).collect();
        if passage_rows.is_empty() {
            return Err(ModelError::Example {
                id: example.id.clone(),
                detail: "empty passage".into(),
            });
        }
        if question_rows.is_empty() {
            return Err(ModelError::Example {
                id: example.id.clone(),
                detail: "empty question".into(),
            });
        }
        Ok(Prepared { id: example.id.clone(), passage_rows, question_rows, gold })
    }

    /// Build the loss graph for one prepared example; optionally run the
    /// backward pass and collect gradients.
    fn loss_graph(
        &self,
        prepared: &Prepared,
        want_grads: bool,
    ) -> Result<(f64, Option<ModelGradients>), ModelError> {
        let g = Graph::new();
        let p_nodes: Vec<NodeId> = prepared
            .passage_rows
            .iter()
            .map(|&row| self.row_node(&g, row, want_grads))
            .collect();
        let q_nodes: Vec<NodeId> = prepared
            .question_rows
            .iter()
            .map(|&row| self.row_node(&g, row, want_grads))
            .collect();
        let params = self.param_nodes(&g, want_grads);
        let parts = self.forward(&g, &p_nodes, &q_nodes, &params)?;

        let ls = g.scalar_pick(g.log(parts.start_probs)?, prepared.gold.start)?;
        let le = g.scalar_pick(g.log(parts.end_probs)?, prepared.gold.end)?;
        let loss_node = g.scale(g.add(ls, le)?, -1.0)?;
        let loss = g.value_scalar(loss_node);
        if !loss.is_finite() {
            return Err(ModelError::Diff(DiffError::NonFinite {
                op: "loss",
                detail: format!("example {}: non-finite loss {loss}", prepared.id),
            }));
        }
        if !want_grads {
            return Ok((loss, None));
        }

        let grads = g.backward(loss_node).map_err(|e| ModelError::Example {
            id: prepared.id.clone(),
            detail: format!("backward failed: {e}"),
        })?;
        let mut param_grads = BTreeMap::new();
        for (name, &id) in &params {
            param_grads.insert(name.clone(), grads.wrt(id).expect("parameter leaf").clone());
        }
        // a vocabulary row can appear at several positions (and in both
        // passage and question); its row gradient is the sum
        let mut embedding_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let positions = prepared
            .passage_rows
            .iter()
            .zip(&p_nodes)
            .chain(prepared.question_rows.iter().zip(&q_nodes));
        for (&row, &node) in positions {
            let grad = grads.wrt(node).expect("embedding leaf");
            match embedding_rows.get_mut(&row) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(grad.data()) {
                        *a += b;
                    }
                }
                None => {
                    embedding_rows.insert(row, grad.data().to_vec());
                }
            }
        }
        Ok((loss, Some(ModelGradients { params: param_grads, embedding_rows })))
    }

    fn row_node(&self, g: &Graph, row: usize, trainable: bool) -> NodeId {
        let tensor = Tensor::vector(self.embeddings[row].clone());
        if trainable {
            g.leaf(tensor)
        } else {
            g.constant(tensor)
        }
    }

    fn input_nodes(
        &self,
        g: &Graph,
        embeddings: &[Vec<f64>],
        trainable: bool,
    ) -> Result<Vec<NodeId>, ModelError> {
        embeddings
            .iter()
            .map(|e| {
                if e.len() != self.dim {
                    return Err(ModelError::Invalid {
                        what: "embedding length",
                        detail: format!("{} vs dim {}", e.len(), self.dim),
                    });
                }
                let tensor = Tensor::vector(e.clone());
                Ok(if trainable { g.leaf(tensor) } else { g.constant(tensor) })
            })
            .collect()
    }

    fn param_nodes(&self, g: &Graph, trainable: bool) -> BTreeMap<String, NodeId> {
        self.params
            .iter()
            .map(|(name, tensor)| {
                let id =
                    if trainable { g.leaf(tensor.clone()) } else { g.constant(tensor.clone()) };
                (name.clone(), id)
            })
            .collect()
    }

    fn forward(
        &self,
        g: &Graph,
        passage: &[NodeId],
        question: &[NodeId],
        params: &BTreeMap<String, NodeId>,
    ) -> Result<ForwardParts, ModelError> {
        if passage.is_empty() {
            return Err(ModelError::EmptyInput("passage"));
        }
        if question.is_empty() {
            return Err(ModelError::EmptyInput("question"));
        }
        let n = passage.len();
        let dim = self.dim;
        let param = |name: &str| *params.get(name).expect("parameter set matches kind");

        let qbar = g.mean_pool(question)?;
        let direction = match self.kind {
            ModelKind::CosineLite => qbar,
            ModelKind::DenseLite => {
                let q_col = g.reshape(qbar, &[dim, 1])?;
                g.reshape(g.matmul(param("bilinear"), q_col)?, &[dim])?
            }
        };

        let mut sims = Vec::with_capacity(n);
        for &x in passage {
            let cos = g.cosine_similarity(x, direction)?;
            let gate = g.norm_gate(x, SIM_TAU)?;
            sims.push(g.scale(g.mul(cos, gate)?, SIM_GAIN)?);
        }

        let attention = g.softmax(g.concat(&sims)?)?;
        let stacked = g.reshape(g.concat(passage)?, &[n, dim])?;
        let summary = g.reshape(g.matmul(g.reshape(attention, &[1, n])?, stacked)?, &[dim])?;

        let zero = g.constant(Tensor::scalar(0.0));
        let zero_vec = g.constant(Tensor::vector(vec![0.0; dim]));
        // shared tanh layer for dense-lite: same weights applied to the
        // start-side and end-side feature vectors
        let head_input = |features: NodeId| -> Result<NodeId, DiffError> {
            match self.kind {
                ModelKind::CosineLite => Ok(features),
                ModelKind::DenseLite => {
                    let feat_len = 3 * dim + SIM_WINDOW;
                    let hidden = Self::hidden_dim(dim);
                    let col = g.reshape(features, &[feat_len, 1])?;
                    let pre = g.reshape(g.matmul(param("hidden_w"), col)?, &[hidden])?;
                    g.tanh(g.add(pre, param("hidden_b"))?)
                }
            }
        };
        let mut start_logits = Vec::with_capacity(n);
        let mut end_logits = Vec::with_capacity(n);
        for i in 0..n {
            let mut window = Vec::with_capacity(SIM_WINDOW);
            for back in 0..SIM_WINDOW {
                window.push(if i >= back { sims[i - back] } else { zero });
            }
            let prev = if i > 0 { passage[i - 1] } else { zero_vec };
            let next = if i + 1 < n { passage[i + 1] } else { zero_vec };

            let mut start_feats = vec![prev, passage[i], summary];
            start_feats.extend_from_slice(&window);
            let s_in = head_input(g.concat(&start_feats)?)?;
            start_logits.push(g.add(g.dot(param("start_head"), s_in)?, param("start_bias"))?);

            let mut end_feats = vec![passage[i], next, summary];
            end_feats.extend_from_slice(&window);
            let e_in = head_input(g.concat(&end_feats)?)?;
            end_logits.push(g.add(g.dot(param("end_head"), e_in)?, param("end_bias"))?);
        }
        let start_logits = g.concat(&start_logits)?;
        let end_logits = g.concat(&end_logits)?;
        Ok(ForwardParts {
            start_probs: g.softmax(start_logits)?,
            end_probs: g.softmax(end_logits)?,
            start_logits,
            end_logits,
        })
    }

    /// Serialize the complete model state to a JSON checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let checkpoint = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind,
            dim: self.dim,
            seed: self.seed,
            vocab_sha256: self.vocab_hash(),
            vocab: self.vocab.clone(),
            embeddings: self.embeddings.clone(),
            params: self.params.clone(),
        };
        let body = serde_json::to_string(&checkpoint).expect("checkpoint serializes");
        fs::write(path, body)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })
    }

    /// Reload a checkpoint. Verifies the format version, the vocabulary
    /// hash, and all array shapes; a reloaded model is bit-identical to
    /// the one saved.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })?;
        let checkpoint: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| ModelError::Json { path: path.display().to_string(), source: e })?;
        if checkpoint.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "format version {} (this build reads {CHECKPOINT_VERSION})",
                checkpoint.format_version
            )));
        }
        let model = QaModel {
            kind: checkpoint.kind,
            dim: checkpoint.dim,
            seed: checkpoint.seed,
            vocab: checkpoint.vocab,
            embeddings: checkpoint.embeddings,
            params: checkpoint.params,
        };
        if model.vocab_hash() != checkpoint.vocab_sha256 {
            return Err(ModelError::Checkpoint("vocabulary hash mismatch".into()));
        }
        if model.vocab.first().map(String::as_str) != Some(UNK) {
            return Err(ModelError::Checkpoint(format!("vocabulary must start with {UNK}")));
        }
        if model.embeddings.len() != model.vocab.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} embedding rows for {} vocabulary words",
                model.embeddings.len(),
                model.vocab.len()
            )));
        }
        if let Some(bad) = model.embeddings.iter().position(|row| row.len() != model.dim) {
            return Err(ModelError::Checkpoint(format!(
                "embedding row {bad} has length {} (dim is {})",
                model.embeddings[bad].len(),
                model.dim
            )));
        }
        let expected_keys: &[&str] = match model.kind {
            ModelKind::CosineLite => &["end_bias", "end_head", "start_bias", "start_head"],
            ModelKind::DenseLite => &[
                "bilinear",
                "end_bias",
                "end_head",
                "hidden_b",
                "hidden_w",
                "start_bias",
                "start_head",
            ],
        };
        let got_keys: Vec<&str> = model.params.keys().map(String::as_str).collect();
        if got_keys != expected_keys {
            return Err(ModelError::Checkpoint(format!(
                "parameter set {got_keys:?} does not match {expected_keys:?} for {}",
                model.kind
            )));
        }
        for (name, tensor) in &model.params {
            let ok = match (model.kind, name.as_str()) {
                (_, "start_bias") | (_, "end_bias") => tensor.shape().is_empty(),
                (ModelKind::CosineLite, "start_head") | (ModelKind::CosineLite, "end_head") => {
                    tensor.shape() == [3 * model.dim + SIM_WINDOW]
                }
                (ModelKind::DenseLite, "bilinear") => tensor.shape() == [model.dim, model.dim],
                (ModelKind::DenseLite, "hidden_w") => {
                    tensor.shape() == [Self::hidden_dim(model.dim), 3 * model.dim + SIM_WINDOW]
                }
                (ModelKind::DenseLite, "hidden_b") => {
                    tensor.shape() == [Self::hidden_dim(model.dim)]
                }
                (ModelKind::DenseLite, "start_head") | (ModelKind::DenseLite, "end_head") => {
                    tensor.shape() == [Self::hidden_dim(model.dim)]
                }
                _ => false,
            };
            if !ok {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} has shape {:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(model)
    }
}

struct Prepared {
    id: String,
    passage_rows: Vec<usize>,
    question_rows: Vec<usize>,
    gold: Span,
}

struct ForwardParts {
    start_probs: NodeId,
    end_probs: NodeId,
    start_logits: NodeId,
    end_logits: NodeId,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    kind: ModelKind,
    dim: usize,
    seed: u64,
    vocab_sha256: String,
    vocab: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    params: BTreeMap<String, Tensor>,
}

/// Highest-joint-probability span with `start <= end` and length at most
/// `max_len`. Ties resolve to the earliest start, then earliest end.
pub fn decode_span(start_probs: &[f64], end_probs: &[f64], max_len: usize) -> SpanPrediction {
    assert_eq!(start_probs.len(), end_probs.len());
    assert!(!start_probs.is_empty(), "cannot decode an empty distribution");
    assert!(max_len >= 1);
    let n = start_probs.len();
    let mut best = SpanPrediction { span: Span::new(0, 0), score: f64::NEG_INFINITY };
    for (s, &p_start) in start_probs.iter().enumerate() {
        for (e, &p_end) in end_probs.iter().enumerate().take(n.min(s + max_len)).skip(s) {
            let score = p_start * p_end;
            if score > best.score {
                best = SpanPrediction { span: Span::new(s, e), score };
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};

    fn tiny_corpus() -> Dataset {
        generate(&SyntheticConfig { examples: 12, seed: 5, ..Default::default() }).dataset
    }

    fn tiny_model(kind: ModelKind) -> QaModel {
        QaModel::init(kind, 8, 3, &tiny_corpus()).unwrap()
    }

    #[test]
    fn vocabulary_is_sorted_with_unk_first() {
        let model = tiny_model(ModelKind::CosineLite);
        assert_eq!(model.vocab()[0], UNK);
        let rest = &model.vocab()[1..];
        assert!(rest.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(model.vocab_index("never-seen-word-zzz"), 0);
        let known = &model.vocab()[2];
        assert_eq!(model.vocab_index(known), 2);
    }

    #[test]
    fn initialization_is_deterministic_in_the_seed() {
        let corpus = tiny_corpus();
        let a = QaModel::init(ModelKind::DenseLite, 8, 3, &corpus).unwrap();
        let b = QaModel::init(ModelKind::DenseLite, 8, 3, &corpus).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.params, b.params);
        let c = QaModel::init(ModelKind::DenseLite, 8, 4, &corpus).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn vocabulary_ignores_example_order() {
        let corpus = tiny_corpus();
        let mut reversed = corpus.clone();
        reversed.examples.reverse();
        let a = QaModel::init(ModelKind::CosineLite, 8, 3, &corpus).unwrap();
        let b = QaModel::init(ModelKind::CosineLite, 8, 3, &reversed).unwrap();
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.vocab_hash(), b.vocab_hash());
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn forward_probabilities_sum_to_one_for_both_kinds() {
        let corpus = tiny_corpus();
        let ex = &corpus.examples[0];
        for kind in [ModelKind::CosineLite, ModelKind::DenseLite] {
            let model = tiny_model(kind);
            let g = Graph::new();
            let p = model.input_nodes(&g, &model.embed_text(&ex.passage), false).unwrap();
            let q = model.input_nodes(&g, &model.embed_text(&ex.question), false).unwrap();
            let params = model.param_nodes(&g, false);
            let parts = model.forward(&g, &p, &q, &params).unwrap();
            for probs in [g.value(parts.start_probs), g.value(parts.end_probs)] {
                let sum: f64 = probs.data().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{kind}: sum {sum}");
                assert!(probs.data().iter().all(|p| *p > 0.0));
            }
        }
    }

    #[test]
    fn decode_prefers_highest_joint_probability() {
        let start = [0.1, 0.6, 0.3];
        let end = [0.2, 0.1, 0.7];
        let pred = decode_span(&start, &end, 8);
        assert_eq!((pred.span.start, pred.span.end), (1, 2));
        assert!((pred.score - 0.42).abs() < 1e-12);
    }

    #[test]
    fn decode_respects_length_cap_and_ordering() {
        // all mass at start 0 / end 9, but a cap of 8 forbids that pair
        let mut start = vec![0.0; 10];
        let mut end = vec![0.0; 10];
        start[0] = 1.0;
        end[9] = 1.0;
        let pred = decode_span(&start, &end, 8);
        assert!(pred.span.end < pred.span.start + 8);
        assert!(pred.span.start <= pred.span.end);
    }

    #[test]
    fn decode_breaks_ties_toward_the_earliest_span() {
        let uniform = vec![0.25; 4];
        let pred = decode_span(&uniform, &uniform, 8);
        assert_eq!((pred.span.start, pred.span.end), (0, 0));
    }

    #[test]
    fn single_token_passage_predicts_the_only_span() {
        let model = tiny_model(ModelKind::CosineLite);
        let question = model.embed_text("what is this ?");
        let passage = model.embed_text("word");
        let pred = model.predict_from_embeddings(&passage, &question).unwrap();
        assert_eq!((pred.span.start, pred.span.end), (0, 0));
        assert!((pred.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let corpus = tiny_corpus();
        let ex = &corpus.examples[1];
        for kind in [ModelKind::CosineLite, ModelKind::DenseLite] {
            let model = tiny_model(kind);
            let (_, grads) = model.loss_and_gradients(ex).unwrap();
            let eps = 1e-5;
            for (name, grad) in &grads.params {
                let len = grad.data().len();
                for idx in [0, len / 2, len - 1] {
                    let mut plus = model.clone();
                    let mut t = plus.params()[name].clone();
                    t.data_mut()[idx] += eps;
                    plus.set_param(name, t).unwrap();
                    let mut minus = model.clone();
                    let mut t = minus.params()[name].clone();
                    t.data_mut()[idx] -= eps;
                    minus.set_param(name, t).unwrap();
                    let fd = (plus.example_loss(ex).unwrap() - minus.example_loss(ex).unwrap())
                        / (2.0 * eps);
                    let analytic = grad.data()[idx];
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        (analytic - fd).abs() / denom <= 1e-4,
                        "{kind} {name}[{idx}]: analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn embedding_row_gradients_match_finite_differences() {
        let corpus = tiny_corpus();
        let ex = &corpus.examples[2];
        let model = tiny_model(ModelKind::CosineLite);
        let (_, grads) = model.loss_and_gradients(ex).unwrap();
        let eps = 1e-5;
        // probe the three most-used rows, including any shared between
        // passage and question
        for (&row, grad) in grads.embedding_rows.iter().take(3) {
            for idx in [0, model.dim() - 1] {
                let mut plus = model.clone();
                let mut v = plus.embedding(row).to_vec();
                v[idx] += eps;
                plus.set_embedding(row, v).unwrap();
                let mut minus = model.clone();
                let mut v = minus.embedding(row).to_vec();
                v[idx] -= eps;
                minus.set_embedding(row, v).unwrap();
                let fd =
                    (plus.example_loss(ex).unwrap() - minus.example_loss(ex).unwrap()) / (2.0 * eps);
                let analytic = grad[idx];
                let denom = fd.abs().max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-4,
                    "row {row}[{idx}]: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn passage_target_gradient_matches_finite_differences() {
        let corpus = tiny_corpus();
        let ex = &corpus.examples[3];
        let model = tiny_model(ModelKind::DenseLite);
        let passage = model.embed_text(&ex.passage);
        let question = model.embed_text(&ex.question);
        let span = model.predict_from_embeddings(&passage, &question).unwrap().span;
        for target in [SpanTarget::LogProb, SpanTarget::LogitSum] {
            let (_, grad) = model.target_gradient(&passage, &question, span, target).unwrap();
            let eps = 1e-5;
            for pos in [0, passage.len() / 2] {
                for idx in [0, model.dim() - 1] {
                    let mut plus = passage.clone();
                    plus[pos][idx] += eps;
                    let (v_plus, _) =
                        model.target_gradient(&plus, &question, span, target).unwrap();
                    let mut minus = passage.clone();
                    minus[pos][idx] -= eps;
                    let (v_minus, _) =
                        model.target_gradient(&minus, &question, span, target).unwrap();
                    let fd = (v_plus - v_minus) / (2.0 * eps);
                    let analytic = grad[pos][idx];
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        (analytic - fd).abs() / denom <= 1e-4,
                        "{target:?} pos {pos}[{idx}]: analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_zero_epochs_changes_nothing() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(ModelKind::CosineLite);
        let frozen = model.clone();
        let trace = model
            .train(&corpus, &TrainConfig { epochs: 0, ..Default::default() })
            .unwrap();
        assert_eq!(trace.losses.len(), 1);
        assert_eq!(model.params, frozen.params);
        assert_eq!(model.embeddings, frozen.embeddings);

        let trace = model
            .train(
                &corpus,
                &TrainConfig { epochs: 8, batch_size: 4, learning_rate: 0.05, seed: 42 },
            )
            .unwrap();
        assert_eq!(trace.losses.len(), 9);
        assert!(
            trace.losses[8] < trace.losses[0],
            "loss did not fall: {:?}",
            trace.losses
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus();
        let config = TrainConfig { epochs: 2, batch_size: 4, learning_rate: 0.05, seed: 9 };
        let mut a = tiny_model(ModelKind::CosineLite);
        let trace_a = a.train(&corpus, &config).unwrap();
        let mut b = tiny_model(ModelKind::CosineLite);
        let trace_b = b.train(&corpus, &config).unwrap();
        assert_eq!(trace_a.losses, trace_b.losses);
        assert_eq!(a.params, b.params);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(ModelKind::DenseLite);
        model
            .train(&corpus, &TrainConfig { epochs: 1, batch_size: 4, ..Default::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("model.json");
        let path_b = dir.path().join("model2.json");
        model.save(&path_a).unwrap();
        let reloaded = QaModel::load(&path_a).unwrap();
        assert_eq!(model.params, reloaded.params);
        assert_eq!(model.embeddings, reloaded.embeddings);
        reloaded.save(&path_b).unwrap();
        assert_eq!(fs::read(&path_a).unwrap(), fs::read(&path_b).unwrap());

        let ex = &corpus.examples[0];
        let a = model.predict(&ex.passage, &ex.question).unwrap();
        let b = reloaded.predict(&ex.passage, &ex.question).unwrap();
        assert_eq!(a.span, b.span);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }

    #[test]
    fn checkpoint_with_tampered_vocabulary_is_rejected() {
        let model = tiny_model(ModelKind::CosineLite);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let mut raw: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        raw["vocab"][1] = serde_json::Value::String("tampered".into());
        fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
        let err = QaModel::load(&path).unwrap_err().to_string();
        assert!(err.contains("hash"), "{err}");
    }

    #[test]
    fn model_kind_parses_its_display_form() {
        for kind in [ModelKind::CosineLite, ModelKind::DenseLite] {
            assert_eq!(kind.to_string().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("bert-large".parse::<ModelKind>().is_err());
    }
}
