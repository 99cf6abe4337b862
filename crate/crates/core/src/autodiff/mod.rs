//! Dynamic computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value, so a graph is
//! acyclic by construction. [`Graph::backward`] walks the nodes in reverse
//! order once and produces numeric gradients. [`Graph::grad`] instead emits the
//! gradient as new graph nodes, which makes it differentiable a second time;
//! only the op subset used by the GAN critic supports this.

mod backward;
pub mod check;
mod higher;
mod ops;

use std::sync::Arc;

use rand::Rng;

use crate::tensor::{Result, Tensor, TensorError};

pub use backward::Gradients;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    /// `[.., k] x [k, n]`
    MatMul,
    /// `[b, m, k] x [b, k, n]`
    BatchMatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    LogSoftmax,
    CrossEntropy {
        targets: Arc<Vec<usize>>,
        ignore: Option<usize>,
        probs: Tensor,
        count: usize,
    },
    BceWithLogits {
        targets: Arc<Vec<f64>>,
    },
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    /// Inverse of `Slice`: embeds the input into zeros along `axis`.
    Pad {
        axis: usize,
        start: usize,
    },
    Mean,
    Sum,
    SumTo,
    BroadcastTo,
    L2Norm,
    Conv1d,
    KernelFlip,
    Reshape,
    Transpose,
    GatherRows {
        ids: Arc<Vec<usize>>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::BatchMatMul => "bmm",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::SumTo => "sum_to",
            Op::BroadcastTo => "broadcast_to",
            Op::L2Norm => "l2_norm",
            Op::Conv1d => "conv1d",
            Op::KernelFlip => "kernel_flip",
            Op::Reshape => "reshape",
            Op::Transpose => "transpose",
            Op::GatherRows { .. } => "gather_rows",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) inputs: Vec<usize>,
    pub(crate) requires_grad: bool,
}

/// Append-only computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copy of `v`'s value as a new constant; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub(crate) fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Result<Var> {
        if cfg!(debug_assertions)
            && !value.all_finite()
            && inputs.iter().all(|&i| self.nodes[i].value.all_finite())
        {
            return Err(TensorError::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x + sigma * N(0, 1)`; the noise is a constant.
    pub fn gaussian_noise_add<R: Rng + ?Sized>(&mut self, x: Var, sigma: f64, rng: &mut R) -> Result<Var> {
        if sigma == 0.0 {
            return Ok(x);
        }
        let noise = Tensor::randn(self.shape(x), sigma, rng);
        let n = self.constant(noise);
        self.add(x, n)
    }
}

#[cfg(test)]
mod tests;
