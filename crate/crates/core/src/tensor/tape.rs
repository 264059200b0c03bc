use std::fmt;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the recorded operations, used in diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Clamp,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    ConcatCols,
    Gather,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Softplus => "softplus",
            OpKind::Clamp => "clamp",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Gather => "gather",
        };
        f.write_str(name)
    }
}

impl OpKind {
    /// Every differentiable operation (all kinds except `Leaf`).
    pub const DIFFERENTIABLE: [OpKind; 19] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Softplus,
        OpKind::Clamp,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::ConcatCols,
        OpKind::Gather,
    ];
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::DIFFERENTIABLE
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Argument(format!("unknown operation {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub(super) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, T, T),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    ConcatCols(Var, Var),
    Gather(Var, Vec<(usize, usize)>),
}

impl<T> Op<T> {
    pub(super) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Clamp(..) => OpKind::Clamp,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::Gather(..) => OpKind::Gather,
        }
    }

    pub(super) fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Softplus(x)
            | Op::Clamp(x, ..)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x, _)
            | Op::Mean(x, _)
            | Op::Gather(x, _) => vec![x],
        }
    }
}

pub(super) struct Node<T> {
    pub(super) value: Tensor<T>,
    pub(super) op: Op<T>,
    pub(super) requires_grad: bool,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so index order is a topological
/// order and the backward sweep simply walks indices downwards. A tape is
/// single-use: build the forward pass, call [`Tape::backward`] once, read
/// the leaf gradients, drop it.
pub struct Tape<T = f32> {
    pub(super) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    fault: Option<(OpKind, T)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    /// Deliberately corrupts backward: gradients leaving every `kind` node
    /// are multiplied by `factor`. Used to show the gradient checker bites.
    pub fn inject_gradient_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, T::lit(factor)));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are only kept for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub(super) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Afterwards every `requires_grad` leaf that `loss` depends on holds
    /// `∂loss/∂leaf`; contributions from fan-out are summed. Leaves that do
    /// not influence `loss` get no gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(out.shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut upstream) = grads[idx].take() else {
                continue;
            };
            if let Some((kind, factor)) = self.fault {
                if node.op.kind() == kind {
                    upstream.data_mut().iter_mut().for_each(|v| *v = *v * factor);
                }
            }
            self.propagate(idx, &upstream, &mut grads);
        }

        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Zeroed gradient slot for `v`, created on first use.
    pub(super) fn slot<'g>(
        &self,
        grads: &'g mut [Option<Tensor<T>>],
        v: Var,
    ) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec())))
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| format!("%{i} = {} {:?}", n.op.kind(), n.value.shape())),
            )
            .finish()
    }
}
