//! The tape: an append-only list of op nodes replayed in reverse by
//! [`Graph::backward`].
//!
//! Nodes are pushed in execution order, so the vector is already a
//! topological order. Gradients accumulate additively when a value fans out.

use crate::error::{Result, TensorError};
use crate::ops;
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op identity, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Conv1d,
    MaxPool1d,
    BatchNorm1d,
    LayerNorm,
    Relu,
    Sigmoid,
    Dropout,
    Add,
    Mul,
    Scale,
    Concat,
    Reshape,
    Narrow,
    MeanAxis,
    MaxAxis,
    Linear,
    Softmax,
    WeightedSum,
    Upsample,
    Sum,
    Mean,
    BceWithLogits,
    KlDiv,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 23] = [
        OpKind::Conv1d,
        OpKind::MaxPool1d,
        OpKind::BatchNorm1d,
        OpKind::LayerNorm,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Dropout,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Narrow,
        OpKind::MeanAxis,
        OpKind::MaxAxis,
        OpKind::Linear,
        OpKind::Softmax,
        OpKind::WeightedSum,
        OpKind::Upsample,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::BceWithLogits,
        OpKind::KlDiv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv1d => "conv1d",
            OpKind::MaxPool1d => "maxpool1d",
            OpKind::BatchNorm1d => "batchnorm1d",
            OpKind::LayerNorm => "layernorm",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Dropout => "dropout",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::Narrow => "narrow",
            OpKind::MeanAxis => "mean_axis",
            OpKind::MaxAxis => "max_axis",
            OpKind::Linear => "linear",
            OpKind::Softmax => "softmax",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::Upsample => "upsample",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::BceWithLogits => "bce_with_logits",
            OpKind::KlDiv => "kl_div",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Recorded op plus whatever its backward rule needs.
pub(crate) enum Op<S> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm1d {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        /// Whether batch statistics (train mode) normalized the input.
        batch_stats: bool,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<S>,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: S,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape {
        input: Var,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Softmax {
        input: Var,
    },
    WeightedSum {
        inputs: Vec<Var>,
        weights: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<S>,
    },
    KlDiv {
        p: Var,
        q: Var,
    },
}

impl<S> Op<S> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::MaxPool1d { .. } => OpKind::MaxPool1d,
            Op::BatchNorm1d { .. } => OpKind::BatchNorm1d,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Concat { .. } => OpKind::Concat,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::MeanAxis { .. } => OpKind::MeanAxis,
            Op::MaxAxis { .. } => OpKind::MaxAxis,
            Op::Linear { .. } => OpKind::Linear,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::BceWithLogits { .. } => OpKind::BceWithLogits,
            Op::KlDiv { .. } => OpKind::KlDiv,
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) grad: Option<Vec<S>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<S>,
}

/// Gradient contributions produced by one backward rule.
pub(crate) type Contribs<S> = Vec<(Var, Vec<S>)>;

/// A single-threaded gradient tape.
pub struct Graph<S: Scalar = f32> {
    pub(crate) nodes: Vec<Node<S>>,
    backward_done: bool,
    fault: Option<OpKind>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
            fault: None,
        }
    }

    /// Corrupts the backward rule of `kind` (gradients scaled by 1.5).
    /// Exists so the gradient checker itself can be tested.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after [`backward`](Self::backward). Interior
    /// gradients are released while the tape unwinds.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value"))
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Result<Var> {
        let kind = op.kind();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: kind.name() });
        }
        let requires_grad = self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv1d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm1d { input, gamma, beta, .. } | Op::LayerNorm { input, gamma, beta, .. } => {
                vec![*input, *gamma, *beta]
            }
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } => vec![*lhs, *rhs],
            Op::KlDiv { p, q } => vec![*p, *q],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::WeightedSum { inputs, weights } => {
                let mut v = inputs.clone();
                v.push(*weights);
                v
            }
            Op::MaxPool1d { input, .. }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Dropout { input, .. }
            | Op::Scale { input, .. }
            | Op::Reshape { input }
            | Op::Narrow { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::MaxAxis { input, .. }
            | Op::Softmax { input }
            | Op::Upsample { input, .. }
            | Op::Sum { input }
            | Op::Mean { input } => vec![*input],
            Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }

    /// Populates gradients for every `requires_grad` node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let kind = self.nodes[i].op.kind();
            let contribs = self.node_backward(i, &g);
            let factor = (self.fault == Some(kind)).then(|| S::of(1.5));
            for (v, mut gv) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if let Some(f) = factor {
                    gv.iter_mut().for_each(|x| *x *= f);
                }
                let node = &mut self.nodes[v.0];
                debug_assert_eq!(gv.len(), node.value.numel());
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(gv),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[S]) -> Contribs<S> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => ops::conv::conv1d_backward(self, *input, *weight, *bias, *stride, *padding, g),
            Op::MaxPool1d { input, argmax } => ops::pool::scatter_backward(self, *input, argmax, g),
            Op::MaxAxis { input, argmax } => ops::pool::scatter_backward(self, *input, argmax, g),
            Op::BatchNorm1d {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => ops::norm::batchnorm_backward(self, *input, *gamma, *beta, xhat, inv_std, *batch_stats, g),
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => ops::norm::layernorm_backward(self, *input, *gamma, *beta, xhat, inv_std, g),
            Op::Relu { input } => ops::pointwise::relu_backward(self, *input, g),
            Op::Sigmoid { input } => ops::pointwise::sigmoid_backward(*input, out, g),
            Op::Dropout { input, mask } => vec![(*input, g.iter().zip(mask).map(|(a, m)| *a * *m).collect())],
            Op::Add { lhs, rhs } => ops::pointwise::add_backward(self, *lhs, *rhs, g),
            Op::Mul { lhs, rhs } => ops::pointwise::mul_backward(self, *lhs, *rhs, g),
            Op::Scale { input, factor } => vec![(*input, g.iter().map(|a| *a * *factor).collect())],
            Op::Concat { inputs, axis } => ops::shape::concat_backward(self, inputs, *axis, out, g),
            Op::Reshape { input } => vec![(*input, g.to_vec())],
            Op::Narrow { input, axis, start } => ops::shape::narrow_backward(self, *input, *axis, *start, out, g),
            Op::MeanAxis { input, axis } => ops::shape::mean_axis_backward(self, *input, *axis, g),
            Op::Linear { input, weight, bias } => ops::linear::linear_backward(self, *input, *weight, *bias, g),
            Op::Softmax { input } => ops::pointwise::softmax_backward(*input, out, g),
            Op::WeightedSum { inputs, weights } => ops::pointwise::weighted_sum_backward(self, inputs, *weights, g),
            Op::Upsample { input, factor } => ops::shape::upsample_backward(self, *input, *factor, g),
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                vec![(*input, vec![g[0]; n])]
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                vec![(*input, vec![g[0] / S::of(n as f64); n])]
            }
            Op::BceWithLogits { logits, targets } => ops::loss::bce_backward(self, *logits, targets, g),
            Op::KlDiv { p, q } => ops::loss::kl_backward(self, *p, *q, g),
        }
    }
}
