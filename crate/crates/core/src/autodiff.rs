//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation evaluates its result eagerly and
//! records a node, so the tape order is already a topological order.
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! adjoints into every differentiable leaf.
//!
//! The op set is the minimum needed by the QA models in this crate.
//! Values that come out non-finite abort the computation with a
//! diagnostic instead of propagating, and a graph is confined to one
//! thread; run one graph per example when fanning out.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Norms below this are treated as zero in `cosine` and `norm_gate`
/// (value 0, zero gradient) so all-zero word embeddings stay valid inputs.
const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value ({detail})")]
    NonFinite { op: &'static str, detail: String },
    #[error("log of non-positive value {value} at flat index {index}")]
    LogDomain { value: f64, index: usize },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

/// Dense row-major array of finite 64-bit floats.
///
/// `product(shape) == data.len()` always holds; scalars use the empty
/// shape. Constructors reject NaN/Inf so nothing non-finite is admitted
/// into a graph.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::Invalid {
                op: "tensor",
                detail: format!("shape {shape:?} wants {expected} values, got {}", data.len()),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor")?;
        Ok(t)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    ///
    /// Panics if the tensor has more than one element.
    pub fn scalar_value(&self) -> f64 {
        assert!(self.is_scalar(), "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_finite(&self, op: &'static str) -> Result<(), DiffError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(DiffError::NonFinite {
                op,
                detail: format!("{} at flat index {i}", self.data[i]),
            }),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { differentiable: bool },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Cosine(NodeId, NodeId),
    NormGate { input: NodeId, tau: f64 },
    Softmax(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    MeanPool(Vec<NodeId>),
    Concat(Vec<NodeId>),
    ScalarPick(NodeId, usize),
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    /// True when a differentiable leaf is reachable from this node.
    needs_grad: bool,
}

/// Recorded computation tape. Single-threaded by construction; build a
/// fresh graph per example.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Differentiable leaf; `backward` reports a gradient for it.
    pub fn leaf(&self, value: Tensor) -> NodeId {
        self.push(Node { op: Op::Leaf { differentiable: true }, value, needs_grad: true })
    }

    /// Non-differentiable input (held fixed during backward).
    pub fn constant(&self, value: Tensor) -> NodeId {
        self.push(Node { op: Op::Leaf { differentiable: false }, value, needs_grad: false })
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn value_scalar(&self, id: NodeId) -> f64 {
        self.nodes.borrow()[id.0].value.scalar_value()
    }

    pub fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape.clone()
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        NodeId(nodes.len() - 1)
    }

    fn record(&self, op: Op, value: Tensor, tag: &'static str) -> Result<NodeId, DiffError> {
        value.check_finite(tag)?;
        let needs_grad = {
            let nodes = self.nodes.borrow();
            operands(&op).iter().any(|p| nodes[p.0].needs_grad)
        };
        Ok(self.push(Node { op, value, needs_grad }))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape != vb.shape {
                return Err(DiffError::ShapeMismatch {
                    op: "add",
                    lhs: va.shape.clone(),
                    rhs: vb.shape.clone(),
                });
            }
            let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
            Tensor { shape: va.shape.clone(), data }
        };
        self.record(Op::Add(a, b), value, "add")
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape != vb.shape {
                return Err(DiffError::ShapeMismatch {
                    op: "multiply",
                    lhs: va.shape.clone(),
                    rhs: vb.shape.clone(),
                });
            }
            let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
            Tensor { shape: va.shape.clone(), data }
        };
        self.record(Op::Mul(a, b), value, "multiply")
    }

    /// Multiply every element by a fixed constant.
    pub fn scale(&self, a: NodeId, factor: f64) -> Result<NodeId, DiffError> {
        if !factor.is_finite() {
            return Err(DiffError::Invalid { op: "scale", detail: format!("factor {factor}") });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            let data = va.data.iter().map(|x| x * factor).collect();
            Tensor { shape: va.shape.clone(), data }
        };
        self.record(Op::Scale(a, factor), value, "scale")
    }

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape.len() != 2 || vb.shape.len() != 2 || va.shape[1] != vb.shape[0] {
                return Err(DiffError::ShapeMismatch {
                    op: "matrix_product",
                    lhs: va.shape.clone(),
                    rhs: vb.shape.clone(),
                });
            }
            let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for l in 0..k {
                    let x = va.data[i * k + l];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &vb.data[l * n..(l + 1) * n];
                    let out = &mut data[i * n..(i + 1) * n];
                    for (o, y) in out.iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
            }
            Tensor { shape: vec![m, n], data }
        };
        self.record(Op::MatMul(a, b), value, "matrix_product")
    }

    /// Inner product of two equal-length vectors; scalar result.
    pub fn dot(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape.len() != 1 || va.shape != vb.shape {
                return Err(DiffError::ShapeMismatch {
                    op: "dot",
                    lhs: va.shape.clone(),
                    rhs: vb.shape.clone(),
                });
            }
            let sum = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).sum();
            Tensor::scalar(sum)
        };
        self.record(Op::Dot(a, b), value, "dot")
    }

    /// Cosine similarity of two equal-length vectors; scalar result.
    ///
    /// If either vector has (near-)zero norm the similarity is defined as
    /// 0 with zero gradient into both operands.
    pub fn cosine_similarity(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape.len() != 1 || va.shape != vb.shape {
                return Err(DiffError::ShapeMismatch {
                    op: "cosine_similarity",
                    lhs: va.shape.clone(),
                    rhs: vb.shape.clone(),
                });
            }
            let (na, nb) = (va.norm2(), vb.norm2());
            if na < NORM_GUARD || nb < NORM_GUARD {
                Tensor::scalar(0.0)
            } else {
                let dot: f64 = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).sum();
                Tensor::scalar(dot / (na * nb))
            }
        };
        self.record(Op::Cosine(a, b), value, "cosine_similarity")
    }

    /// Soft magnitude gate `|x| / (|x| + tau)`; scalar in `[0, 1)`.
    ///
    /// Rises from 0 at the zero vector toward 1 for large norms. Cosine is
    /// invariant along rays from the origin, so attribution paths that
    /// start at a zero baseline need this radial term to see similarity
    /// features at all.
    pub fn norm_gate(&self, input: NodeId, tau: f64) -> Result<NodeId, DiffError> {
        if tau <= 0.0 || !tau.is_finite() {
            return Err(DiffError::Invalid { op: "norm_gate", detail: format!("tau {tau}") });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let r = nodes[input.0].value.norm2();
            Tensor::scalar(r / (r + tau))
        };
        self.record(Op::NormGate { input, tau }, value, "norm_gate")
    }

    /// Softmax over a vector, computed with max-subtraction.
    pub fn softmax(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.shape.len() != 1 || va.is_empty() {
                return Err(DiffError::Invalid {
                    op: "softmax",
                    detail: format!("wants a nonempty vector, got shape {:?}", va.shape),
                });
            }
            let max = va.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = va.data.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            Tensor { shape: va.shape.clone(), data: exp.into_iter().map(|e| e / sum).collect() }
        };
        self.record(Op::Softmax(a), value, "softmax")
    }

    /// Elementwise natural log; every element must be positive.
    pub fn log(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if let Some(i) = va.data.iter().position(|v| *v <= 0.0) {
                return Err(DiffError::LogDomain { value: va.data[i], index: i });
            }
            let data = va.data.iter().map(|x| x.ln()).collect();
            Tensor { shape: va.shape.clone(), data }
        };
        self.record(Op::Log(a), value, "log")
    }

    pub fn tanh(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            let data = va.data.iter().map(|x| x.tanh()).collect();
            Tensor { shape: va.shape.clone(), data }
        };
        self.record(Op::Tanh(a), value, "tanh")
    }

    /// Elementwise mean of one or more same-shaped inputs.
    pub fn mean_pool(&self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        if inputs.is_empty() {
            return Err(DiffError::Invalid { op: "mean_pool", detail: "empty input list".into() });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[inputs[0].0].value;
            let mut acc = vec![0.0; first.len()];
            for id in inputs {
                let v = &nodes[id.0].value;
                if v.shape != first.shape {
                    return Err(DiffError::ShapeMismatch {
                        op: "mean_pool",
                        lhs: first.shape.clone(),
                        rhs: v.shape.clone(),
                    });
                }
                for (a, b) in acc.iter_mut().zip(&v.data) {
                    *a += b;
                }
            }
            let k = inputs.len() as f64;
            Tensor { shape: first.shape.clone(), data: acc.into_iter().map(|s| s / k).collect() }
        };
        self.record(Op::MeanPool(inputs.to_vec()), value, "mean_pool")
    }

    /// Concatenate scalars and vectors into one vector, in argument order.
    pub fn concat(&self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        if inputs.is_empty() {
            return Err(DiffError::Invalid { op: "concatenate", detail: "empty input list".into() });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let mut data = Vec::new();
            for id in inputs {
                let v = &nodes[id.0].value;
                if v.shape.len() > 1 {
                    return Err(DiffError::Invalid {
                        op: "concatenate",
                        detail: format!("wants scalars or vectors, got shape {:?}", v.shape),
                    });
                }
                data.extend_from_slice(&v.data);
            }
            Tensor::vector(data)
        };
        self.record(Op::Concat(inputs.to_vec()), value, "concatenate")
    }

    /// Pick one element of a vector as a scalar.
    pub fn scalar_pick(&self, a: NodeId, index: usize) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            if va.shape.len() != 1 || index >= va.len() {
                return Err(DiffError::Invalid {
                    op: "scalar_pick",
                    detail: format!("index {index} into shape {:?}", va.shape),
                });
            }
            Tensor::scalar(va.data[index])
        };
        self.record(Op::ScalarPick(a, index), value, "scalar_pick")
    }

    /// Reinterpret the same data under a new shape with equal length.
    pub fn reshape(&self, a: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.0].value;
            let expected: usize = shape.iter().product();
            if expected != va.len() {
                return Err(DiffError::ShapeMismatch {
                    op: "reshape",
                    lhs: va.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            Tensor { shape: shape.to_vec(), data: va.data.clone() }
        };
        self.record(Op::Reshape(a), value, "reshape")
    }

    /// Reverse pass from a scalar root.
    ///
    /// Returns the gradient of `root` with respect to every differentiable
    /// leaf; leaves the root does not reach get zero gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, DiffError> {
        let nodes = self.nodes.borrow();
        if !nodes[root.0].value.is_scalar() {
            return Err(DiffError::NonScalarRoot { shape: nodes[root.0].value.shape.clone() });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; nodes.len()];
        adjoints[root.0] = Some({
            let mut seed = Tensor::zeros_like(&nodes[root.0].value);
            seed.data[0] = 1.0;
            seed
        });

        // Tape order is topological, so one reverse sweep visits every
        // node after all of its consumers.
        for i in (0..=root.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let grad = match adjoints[i].take() {
                Some(g) => g,
                None => continue,
            };
            Self::propagate(&nodes, i, &grad, &mut adjoints);
            if matches!(nodes[i].op, Op::Leaf { differentiable: true }) {
                adjoints[i] = Some(grad);
            }
        }

        let mut grads = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if let Op::Leaf { differentiable: true } = node.op {
                let g = adjoints[i].take().unwrap_or_else(|| Tensor::zeros_like(&node.value));
                grads.insert(NodeId(i), g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(nodes: &[Node], i: usize, grad: &Tensor, adjoints: &mut [Option<Tensor>]) {
        let mut send = |target: NodeId, contribution: Tensor| {
            if !nodes[target.0].needs_grad {
                return;
            }
            match &mut adjoints[target.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };
        match &nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                send(*a, grad.clone());
                send(*b, grad.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let ga = grad.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect();
                let gb = grad.data.iter().zip(&va.data).map(|(g, x)| g * x).collect();
                send(*a, Tensor { shape: va.shape.clone(), data: ga });
                send(*b, Tensor { shape: vb.shape.clone(), data: gb });
            }
            Op::Scale(a, factor) => {
                let data = grad.data.iter().map(|g| g * factor).collect();
                send(*a, Tensor { shape: grad.shape.clone(), data });
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grad.data[i * n + j] * vb.data[l * n + j];
                        }
                        da[i * k + l] = s;
                    }
                }
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += va.data[i * k + l] * grad.data[i * n + j];
                        }
                        db[l * n + j] = s;
                    }
                }
                send(*a, Tensor { shape: vec![m, k], data: da });
                send(*b, Tensor { shape: vec![k, n], data: db });
            }
            Op::Dot(a, b) => {
                let g = grad.data[0];
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let ga = vb.data.iter().map(|y| g * y).collect();
                let gb = va.data.iter().map(|x| g * x).collect();
                send(*a, Tensor { shape: va.shape.clone(), data: ga });
                send(*b, Tensor { shape: vb.shape.clone(), data: gb });
            }
            Op::Cosine(a, b) => {
                let g = grad.data[0];
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (na, nb) = (va.norm2(), vb.norm2());
                if na < NORM_GUARD || nb < NORM_GUARD {
                    return;
                }
                let cos = nodes[i].value.data[0];
                let ga = va
                    .data
                    .iter()
                    .zip(&vb.data)
                    .map(|(x, y)| g * (y / (na * nb) - cos * x / (na * na)))
                    .collect();
                let gb = va
                    .data
                    .iter()
                    .zip(&vb.data)
                    .map(|(x, y)| g * (x / (na * nb) - cos * y / (nb * nb)))
                    .collect();
                send(*a, Tensor { shape: va.shape.clone(), data: ga });
                send(*b, Tensor { shape: vb.shape.clone(), data: gb });
            }
            Op::NormGate { input, tau } => {
                let g = grad.data[0];
                let v = &nodes[input.0].value;
                let r = v.norm2();
                if r < NORM_GUARD {
                    return;
                }
                // d/dx [r/(r+tau)] = tau/(r+tau)^2 * x/r
                let c = g * tau / ((r + tau) * (r + tau)) / r;
                let gx = v.data.iter().map(|x| c * x).collect();
                send(*input, Tensor { shape: v.shape.clone(), data: gx });
            }
            Op::Softmax(a) => {
                let s = &nodes[i].value;
                let inner: f64 = grad.data.iter().zip(&s.data).map(|(g, p)| g * p).sum();
                let gx = grad.data.iter().zip(&s.data).map(|(g, p)| p * (g - inner)).collect();
                send(*a, Tensor { shape: s.shape.clone(), data: gx });
            }
            Op::Log(a) => {
                let v = &nodes[a.0].value;
                let gx = grad.data.iter().zip(&v.data).map(|(g, x)| g / x).collect();
                send(*a, Tensor { shape: v.shape.clone(), data: gx });
            }
            Op::Tanh(a) => {
                let out = &nodes[i].value;
                let gx = grad.data.iter().zip(&out.data).map(|(g, t)| g * (1.0 - t * t)).collect();
                send(*a, Tensor { shape: out.shape.clone(), data: gx });
            }
            Op::MeanPool(inputs) => {
                let k = inputs.len() as f64;
                for id in inputs {
                    let data = grad.data.iter().map(|g| g / k).collect();
                    send(*id, Tensor { shape: nodes[id.0].value.shape.clone(), data });
                }
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for id in inputs {
                    let v = &nodes[id.0].value;
                    let data = grad.data[offset..offset + v.len()].to_vec();
                    offset += v.len();
                    send(*id, Tensor { shape: v.shape.clone(), data });
                }
            }
            Op::ScalarPick(a, index) => {
                let v = &nodes[a.0].value;
                let mut gx = Tensor::zeros_like(v);
                gx.data[*index] = grad.data[0];
                send(*a, gx);
            }
            Op::Reshape(a) => {
                let v = &nodes[a.0].value;
                send(*a, Tensor { shape: v.shape.clone(), data: grad.data.clone() });
            }
        }
    }
}

fn operands(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Dot(a, b) | Op::Cosine(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Softmax(a)
        | Op::Log(a)
        | Op::Tanh(a)
        | Op::ScalarPick(a, _)
        | Op::Reshape(a) => vec![*a],
        Op::NormGate { input, .. } => vec![*input],
        Op::MeanPool(v) | Op::Concat(v) => v.clone(),
    }
}

/// Gradient of a scalar root with respect to each differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient for a differentiable leaf. Zero-filled when the root does
    /// not reach the leaf; `None` for ids that are not differentiable
    /// leaves of the graph.
    pub fn wrt(&self, leaf: NodeId) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn take(mut self, leaf: NodeId) -> Option<Tensor> {
        self.grads.remove(&leaf)
    }
}

/// Central-difference gradient estimate of a scalar function.
///
/// Test oracle: independent of the tape, it only evaluates `f` at
/// perturbed copies of `x`.
pub fn finite_difference_gradient<F>(
    mut f: F,
    x: &Tensor,
    epsilon: f64,
) -> Result<Tensor, DiffError>
where
    F: FnMut(&Tensor) -> Result<f64, DiffError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let original = probe.data[i];
        probe.data[i] = original + epsilon;
        let plus = f(&probe)?;
        probe.data[i] = original - epsilon;
        let minus = f(&probe)?;
        probe.data[i] = original;
        grad.data[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}
