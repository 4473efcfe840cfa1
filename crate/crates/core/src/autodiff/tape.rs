use std::fmt;

use crate::error::{ensure_dim, Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::reassembly::{reassemble_backward_unchecked, reassemble_unchecked};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::training::loss;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    Detach,
    Conv2d,
    Add,
    Sub,
    Mul,
    Scale,
    MulBroadcast,
    Relu,
    Hardswish,
    Sigmoid,
    Softmax,
    PixelShuffle,
    Unfold,
    NearestUpsample,
    AvgPool,
    Concat,
    Reassemble,
    FullyConnected,
    CrossEntropy,
    Sum,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Leaf,
        OpKind::Param,
        OpKind::Detach,
        OpKind::Conv2d,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::MulBroadcast,
        OpKind::Relu,
        OpKind::Hardswish,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::PixelShuffle,
        OpKind::Unfold,
        OpKind::NearestUpsample,
        OpKind::AvgPool,
        OpKind::Concat,
        OpKind::Reassemble,
        OpKind::FullyConnected,
        OpKind::CrossEntropy,
        OpKind::Sum,
    ];
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Autodiff(format!("unknown op `{s}`")))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::Detach => "detach",
            OpKind::Conv2d => "conv2d",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MulBroadcast => "mul_broadcast",
            OpKind::Relu => "relu",
            OpKind::Hardswish => "hardswish",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax_per_position",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::Unfold => "unfold_neighborhood",
            OpKind::NearestUpsample => "nearest_upsample",
            OpKind::AvgPool => "avg_pool_to",
            OpKind::Concat => "concat_channels",
            OpKind::Reassemble => "reassemble",
            OpKind::FullyConnected => "fully_connected",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Sum => "sum",
        };
        f.write_str(name)
    }
}

enum Op<T> {
    Leaf,
    Param,
    Detach,
    Conv2d { x: Var, w: Var, b: Var, geometry: ConvGeometry },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulBroadcast { x: Var, gate: Var },
    Relu(Var),
    Hardswish(Var),
    Sigmoid(Var),
    Softmax(Var),
    PixelShuffle(Var, usize),
    Unfold(Var, usize),
    NearestUpsample(Var, usize),
    AvgPool(Var),
    Concat(Vec<Var>),
    Reassemble { features: Var, kernels: Var },
    FullyConnected { x: Var, w: Var, b: Var },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Sum(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param => OpKind::Param,
            Op::Detach => OpKind::Detach,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::Relu(_) => OpKind::Relu,
            Op::Hardswish(_) => OpKind::Hardswish,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::PixelShuffle(..) => OpKind::PixelShuffle,
            Op::Unfold(..) => OpKind::Unfold,
            Op::NearestUpsample(..) => OpKind::NearestUpsample,
            Op::AvgPool(_) => OpKind::AvgPool,
            Op::Concat(_) => OpKind::Concat,
            Op::Reassemble { .. } => OpKind::Reassemble,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Define-by-run record of a forward pass.
///
/// Nodes are appended in execution order, so inputs always precede the
/// nodes that consume them. A tape supports one [`Tape::backward`] call;
/// call [`Tape::reset`] to record a new pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, Var)>,
    consumed: bool,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    /// Scales the input gradients of every `kind` node by 1.5 during
    /// backward. Only meant for negative controls of the gradient checker.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Registered parameters as `(parameter index, var)`.
    pub fn params(&self) -> &[(usize, Var)] {
        &self.params
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Trainable leaf tagged with its parameter index.
    pub fn param(&mut self, t: Tensor<T>, index: usize) -> Var {
        let v = self.push(Op::Param, t, true);
        self.params.push((index, v));
        v
    }

    /// Stop-gradient: same value, no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(Op::Detach, value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geometry: ConvGeometry) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), self.value(b), geometry)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::Conv2d { x, w, b, geometry }, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.needs(&[x]);
        self.push(Op::Scale(x, s), value, rg)
    }

    /// `x * gate` with a single-channel gate broadcast over channels.
    pub fn mul_broadcast(&mut self, x: Var, gate: Var) -> Result<Var> {
        let value = ops::mul_broadcast_channels(self.value(x), self.value(gate))?;
        let rg = self.needs(&[x, gate]);
        Ok(self.push(Op::MulBroadcast { x, gate }, value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(Op::Relu(x), value, rg)
    }

    pub fn hardswish(&mut self, x: Var) -> Var {
        let value = ops::hardswish(self.value(x));
        let rg = self.needs(&[x]);
        self.push(Op::Hardswish(x), value, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        let rg = self.needs(&[x]);
        self.push(Op::Sigmoid(x), value, rg)
    }

    pub fn softmax_per_position(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_per_position(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Softmax(x), value, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let value = ops::pixel_shuffle(self.value(x), s)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::PixelShuffle(x, s), value, rg))
    }

    pub fn unfold_neighborhood(&mut self, x: Var, k: usize) -> Result<Var> {
        let value = ops::unfold_neighborhood(self.value(x), k)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Unfold(x, k), value, rg))
    }

    pub fn nearest_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let value = ops::nearest_upsample(self.value(x), factor)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::NearestUpsample(x, factor), value, rg))
    }

    pub fn avg_pool_to(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let value = ops::avg_pool_to(self.value(x), h, w)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::AvgPool(x), value, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.avg_pool_to(x, 1, 1)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat_channels(&tensors)?;
        let rg = self.needs(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    /// Bilinear reassembly of `features` by the kernel field in `kernels`.
    ///
    /// Normalization of `kernels` is the caller's responsibility; it is
    /// not checked so that finite differences may perturb the weights.
    pub fn reassemble(&mut self, features: Var, kernels: Var) -> Result<Var> {
        let value = reassemble_unchecked(self.value(features), self.value(kernels))?;
        let rg = self.needs(&[features, kernels]);
        Ok(self.push(Op::Reassemble { features, kernels }, value, rg))
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = ops::fully_connected(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::FullyConnected { x, w, b }, value, rg))
    }

    /// Mean softmax cross-entropy of `(n, classes, 1, 1)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = loss::cross_entropy(self.value(logits), labels)?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(Op::Sum(x), value, rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Autodiff("backward already ran on this tape; reset it first".into()));
        }
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::Autodiff(format!("loss must be a scalar, got {numel} elements")));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut contributions = self.local_gradients(i, &g)?;
            if self.fault == Some(node.op.kind()) {
                for (_, t) in contributions.iter_mut() {
                    *t = t.scale(T::lit(1.5));
                }
            }
            for (input, t) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&t)?,
                    slot @ None => *slot = Some(t),
                }
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_gradients(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf | Op::Param | Op::Detach => Vec::new(),
            Op::Conv2d { x, w, b, geometry } => {
                let (gx, gw, gb) = ops::conv2d_backward(g, val(*x), val(*w), *geometry)?;
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![(*a, g.mul(val(*b))?), (*b, g.mul(val(*a))?)],
            Op::Scale(x, s) => vec![(*x, g.scale(*s))],
            Op::MulBroadcast { x, gate } => {
                let (gx, gg) = ops::mul_broadcast_channels_backward(g, val(*x), val(*gate))?;
                vec![(*x, gx), (*gate, gg)]
            }
            Op::Relu(x) => vec![(*x, g.zip_map(val(*x), "relu", |g, x| g * ops::relu_grad_scalar(x))?)],
            Op::Hardswish(x) => vec![(
                *x,
                g.zip_map(val(*x), "hardswish", |g, x| g * ops::hardswish_grad_scalar(x))?,
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                g.zip_map(&node.value, "sigmoid", |g, y| g * y * (T::one() - y))?,
            )],
            Op::Softmax(x) => vec![(*x, ops::softmax_per_position_backward(g, &node.value)?)],
            Op::PixelShuffle(x, s) => vec![(*x, ops::pixel_unshuffle(g, *s)?)],
            Op::Unfold(x, k) => vec![(*x, ops::unfold_neighborhood_backward(g, val(*x).shape(), *k)?)],
            Op::NearestUpsample(x, f) => vec![(*x, ops::nearest_upsample_backward(g, *f)?)],
            Op::AvgPool(x) => vec![(*x, ops::avg_pool_to_backward(g, val(*x).shape())?)],
            Op::Concat(parts) => {
                let channels: Vec<usize> = parts.iter().map(|v| val(*v).shape().c).collect();
                parts.iter().copied().zip(ops::split_channels(g, &channels)?).collect()
            }
            Op::Reassemble { features, kernels } => {
                let (gf, gk) = reassemble_backward_unchecked(g, val(*features), val(*kernels))?;
                vec![(*features, gf), (*kernels, gk)]
            }
            Op::FullyConnected { x, w, b } => {
                let (gx, gw, gb) = ops::fully_connected_backward(g, val(*x), val(*w))?;
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::CrossEntropy { logits, labels } => {
                let upstream = g.data()[0];
                vec![(*logits, loss::cross_entropy_grad(val(*logits), labels)?.scale(upstream))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.data()[0]))],
        };
        Ok(out)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zero-filled when unreachable.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    /// Gradients of many vars, in order; shape-checked.
    pub fn collect(&self, vars: &[Var]) -> Result<Vec<Tensor<T>>> {
        vars.iter()
            .map(|&v| {
                let g = self.wrt(v);
                ensure_dim("gradients", "element count", self.shapes[v.0].numel(), g.numel())?;
                Ok(g)
            })
            .collect()
    }
}
