//! Define-by-run graph. Built fresh each forward pass, walked once in
//! reverse by [`Graph::backward`], then dropped.

use std::any::Any;

use super::ops;
use super::optim::{ParamId, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// An operation supplied from outside the core op set (RoI extraction,
/// loss kernels). `forward` may stash provenance needed to replay the
/// backward pass exactly; it is handed back in `backward`.
pub trait GraphOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)>;

    /// Gradients w.r.t. each input (None for inputs with no gradient).
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d { stride: usize, pad: usize, has_bias: bool },
    Deconv2d { has_bias: bool },
    Downsample2d { has_bias: bool },
    Linear,
    Relu,
    Sigmoid,
    Softmax { axis: usize },
    Add,
    Scale(f64),
    Sum,
    Mean,
    Reshape,
    Custom(Box<dyn GraphOp>),
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    saved: Option<Box<dyn Any>>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    /// Per-node gradient, indexed by NodeId; None where no path to the loss.
    node_grads: Vec<Option<Tensor>>,
    /// Accumulated per-parameter gradients for every parameter node touched.
    param_grads: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn for_node(&self, id: NodeId) -> Option<&Tensor> {
        self.node_grads[id.0].as_ref()
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.param_grads
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, saved: Option<Box<dyn Any>>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value published by {}", op_name(&op));
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, saved });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives no gradient of its own but participates in
    /// the chain (its node gradient is still reported).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, vec![], value, None)
    }

    /// Leaf bound to a parameter; backward accumulates into its grad slot.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        self.push(Op::Param(id), vec![], params.value(id).clone(), None)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let value = ops::conv2d_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(Op::Conv2d { stride, pad, has_bias: bias.is_some() }, inputs, value, None))
    }

    pub fn deconv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let value =
            ops::deconv2d_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(Op::Deconv2d { has_bias: bias.is_some() }, inputs, value, None))
    }

    pub fn downsample2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let value =
            ops::downsample2d_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(Op::Downsample2d { has_bias: bias.is_some() }, inputs, value, None))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Linear, vec![x, w, b], value, None))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = ops::relu_forward(self.value(x));
        self.push(Op::Relu, vec![x], value, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = ops::sigmoid_forward(self.value(x));
        self.push(Op::Sigmoid, vec![x], value, None)
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let value = ops::softmax_forward(self.value(x), axis)?;
        Ok(self.push(Op::Softmax { axis }, vec![x], value, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut value = ta.clone();
        for (v, &x) in value.data_mut().iter_mut().zip(tb.data()) {
            *v += x;
        }
        Ok(self.push(Op::Add, vec![a, b], value, None))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= c;
        }
        self.push(Op::Scale(c), vec![x], value, None)
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s), None)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Mean, vec![x], Tensor::scalar(s / n), None)
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.numel() {
            return Err(Error::shape(format!(
                "reshape: {:?} ({} elements) to {:?} ({n})",
                t.shape(),
                t.numel(),
                shape
            )));
        }
        let value = Tensor::from_vec(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(Op::Reshape, vec![x], value, None))
    }

    pub fn apply(&mut self, op: impl GraphOp + 'static, inputs: &[NodeId]) -> Result<NodeId> {
        let input_values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let (value, saved) = op.forward(&input_values)?;
        Ok(self.push(Op::Custom(Box::new(op)), inputs.to_vec(), value, saved))
    }

    /// Reverse pass from a scalar loss node. Nodes unreachable from the
    /// loss keep a None gradient; parameter gradients are accumulated in
    /// node order, which is deterministic.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let grad_out = match node_grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            let input_grads = self.backward_one(node, &grad_out)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = grad {
                    match &mut node_grads[slot.0] {
                        Some(acc) => {
                            debug_assert_eq!(acc.shape(), g.shape());
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        none => *none = Some(g),
                    }
                }
            }
            node_grads[idx] = Some(grad_out);
        }

        let mut param_grads: Vec<(ParamId, Tensor)> = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &node_grads[idx] {
                    // the same ParamId may back several leaf nodes
                    if let Some(entry) = param_grads.iter_mut().find(|(p, _)| *p == pid) {
                        for (a, b) in entry.1.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    } else {
                        param_grads.push((pid, g.clone()));
                    }
                }
            }
        }
        Ok(Gradients { node_grads, param_grads })
    }

    fn backward_one(&self, node: &Node, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        Ok(match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d { stride, pad, has_bias } => {
                let x = val(node.inputs[0]);
                let w = val(node.inputs[1]);
                let gx = ops::conv2d_backward_input(w, grad_out, x.shape(), *stride, *pad);
                let gw = ops::conv2d_backward_weight(x, grad_out, w.shape(), *stride, *pad);
                let mut grads = vec![Some(gx), Some(gw)];
                if *has_bias {
                    grads.push(Some(ops::channel_sum(grad_out)));
                }
                grads
            }
            Op::Deconv2d { has_bias } => {
                let x = val(node.inputs[0]);
                let w = val(node.inputs[1]);
                let gx = ops::deconv2d_backward_input(w, grad_out, x.shape());
                let gw = ops::deconv2d_backward_weight(x, grad_out, w.shape());
                let mut grads = vec![Some(gx), Some(gw)];
                if *has_bias {
                    grads.push(Some(ops::channel_sum(grad_out)));
                }
                grads
            }
            Op::Downsample2d { has_bias } => {
                let x = val(node.inputs[0]);
                let w = val(node.inputs[1]);
                let gx = ops::downsample2d_backward_input(w, grad_out, x.shape());
                let gw = ops::downsample2d_backward_weight(x, grad_out, w.shape());
                let mut grads = vec![Some(gx), Some(gw)];
                if *has_bias {
                    grads.push(Some(ops::channel_sum(grad_out)));
                }
                grads
            }
            Op::Linear => {
                let x = val(node.inputs[0]);
                let w = val(node.inputs[1]);
                let (gx, gw, gb) = ops::linear_backward(x, w, grad_out);
                vec![Some(gx), Some(gw), Some(gb)]
            }
            Op::Relu => vec![Some(ops::relu_backward(val(node.inputs[0]), grad_out))],
            Op::Sigmoid => vec![Some(ops::sigmoid_backward(&node.value, grad_out))],
            Op::Softmax { axis } => {
                vec![Some(ops::softmax_backward(&node.value, grad_out, *axis))]
            }
            Op::Add => vec![Some(grad_out.clone()), Some(grad_out.clone())],
            Op::Scale(c) => {
                let mut g = grad_out.clone();
                for v in g.data_mut() {
                    *v *= c;
                }
                vec![Some(g)]
            }
            Op::Sum => {
                let x = val(node.inputs[0]);
                vec![Some(Tensor::full(x.shape(), grad_out.item()))]
            }
            Op::Mean => {
                let x = val(node.inputs[0]);
                let n = x.numel() as f64;
                vec![Some(Tensor::full(x.shape(), grad_out.item() / n))]
            }
            Op::Reshape => {
                let x = val(node.inputs[0]);
                vec![Some(
                    Tensor::from_vec(x.shape().to_vec(), grad_out.data().to_vec())
                        .expect("reshape backward preserves element count"),
                )]
            }
            Op::Custom(op) => {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
                op.backward(&inputs, &node.value, node.saved.as_deref(), grad_out)?
            }
        })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::Conv2d { .. } => "conv2d",
        Op::Deconv2d { .. } => "deconv2d",
        Op::Downsample2d { .. } => "downsample2d",
        Op::Linear => "linear",
        Op::Relu => "relu",
        Op::Sigmoid => "sigmoid",
        Op::Softmax { .. } => "softmax",
        Op::Add => "add",
        Op::Scale(_) => "scale",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::Reshape => "reshape",
        Op::Custom(op) => op.name(),
    }
}
