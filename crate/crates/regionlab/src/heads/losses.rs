//! Loss kernels as graph ops, plus the multi-task sum.
//!
//! The sigmoid mask loss touches only the target class's channel — other
//! channels get exactly zero loss and zero gradient. The softmax variant
//! deliberately couples all channels at every pixel; keeping both around
//! is the point of the laboratory.

use std::any::Any;

use super::targets::{KeypointTarget, MaskTarget};
use super::HeadConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, GraphOp, NodeId, Tensor};

/// Numerically stable binary cross-entropy with logits.
fn bce_with_logits(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln()
}

fn sigmoid(z: f64) -> f64 {
    crate::tensor::ops::sigmoid_scalar(z)
}

/// Log-sum-exp with max subtraction over a slice walked with a stride.
fn log_sum_exp(data: &[f64], base: usize, stride: usize, n: usize) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        max = max.max(data[base + i * stride]);
    }
    let mut sum = 0.0;
    for i in 0..n {
        sum += (data[base + i * stride] - max).exp();
    }
    (max, sum)
}

// ---------------------------------------------------------------------
// per-class sigmoid mask loss

/// Mean binary cross-entropy over the m^2 pixels of the target class's
/// channel; every other channel contributes zero loss and zero gradient.
#[derive(Debug, Clone)]
pub struct MaskSigmoidLoss {
    pub channel: usize,
    pub target: Vec<u8>,
}

impl GraphOp for MaskSigmoidLoss {
    fn name(&self) -> &'static str {
        "mask_loss_sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let logits = inputs[0];
        let (k, m2) = check_mask_logits(logits, self.channel, self.target.len())?;
        let _ = k;
        let data = logits.data();
        let mut loss = 0.0;
        for (p, &t) in self.target.iter().enumerate() {
            loss += bce_with_logits(data[self.channel * m2 + p], t as f64);
        }
        Ok((Tensor::scalar(loss / m2 as f64), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let logits = inputs[0];
        let m2 = self.target.len();
        let g = grad_out.item() / m2 as f64;
        let mut grad = Tensor::zeros(logits.shape());
        {
            let gd = grad.data_mut();
            let data = logits.data();
            for (p, &t) in self.target.iter().enumerate() {
                let idx = self.channel * m2 + p;
                gd[idx] = g * (sigmoid(data[idx]) - t as f64);
            }
        }
        Ok(vec![Some(grad)])
    }
}

fn check_mask_logits(logits: &Tensor, channel: usize, target_len: usize) -> Result<(usize, usize)> {
    if logits.shape().len() != 3 {
        return Err(Error::shape(format!(
            "mask loss: logits must be [K,m,m], got {:?}",
            logits.shape()
        )));
    }
    let (k, m, mw) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if m != mw {
        return Err(Error::shape(format!("mask loss: logits grid {m}x{mw} not square")));
    }
    if channel >= k {
        return Err(Error::invalid(format!("mask loss: channel {channel} out of {k}")));
    }
    if target_len != m * m {
        return Err(Error::shape(format!(
            "mask loss: target has {target_len} pixels, logits {m}x{m}"
        )));
    }
    Ok((k, m * m))
}

// ---------------------------------------------------------------------
// multinomial softmax mask loss

/// Per-pixel (K+1)-way softmax cross-entropy: foreground pixels are
/// labeled with the class channel, background pixels with channel 0;
/// mean over the m^2 pixels.
#[derive(Debug, Clone)]
pub struct MaskSoftmaxLoss {
    /// Channel for foreground pixels (1..=K; 0 is background).
    pub channel: usize,
    pub target: Vec<u8>,
}

impl MaskSoftmaxLoss {
    fn label_at(&self, p: usize) -> usize {
        if self.target[p] != 0 {
            self.channel
        } else {
            0
        }
    }
}

impl GraphOp for MaskSoftmaxLoss {
    fn name(&self) -> &'static str {
        "mask_loss_softmax"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let logits = inputs[0];
        let (k1, m2) = check_mask_logits(logits, self.channel, self.target.len())?;
        let data = logits.data();
        let mut loss = 0.0;
        for p in 0..m2 {
            let (max, sum) = log_sum_exp(data, p, m2, k1);
            let z = data[self.label_at(p) * m2 + p];
            loss += max + sum.ln() - z;
        }
        Ok((Tensor::scalar(loss / m2 as f64), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let logits = inputs[0];
        let k1 = logits.shape()[0];
        let m2 = self.target.len();
        let g = grad_out.item() / m2 as f64;
        let mut grad = Tensor::zeros(logits.shape());
        let gd = grad.data_mut();
        let data = logits.data();
        for p in 0..m2 {
            let (max, sum) = log_sum_exp(data, p, m2, k1);
            let label = self.label_at(p);
            for c in 0..k1 {
                let soft = (data[c * m2 + p] - max).exp() / sum;
                gd[c * m2 + p] = g * (soft - f64::from(c == label));
            }
        }
        Ok(vec![Some(grad)])
    }
}

// ---------------------------------------------------------------------
// classification loss

/// Softmax cross-entropy over K+1 logits (label 0 = background).
#[derive(Debug, Clone)]
pub struct ClsLoss {
    pub label: usize,
}

impl GraphOp for ClsLoss {
    fn name(&self) -> &'static str {
        "cls_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let logits = inputs[0];
        if logits.shape().len() != 1 {
            return Err(Error::shape(format!(
                "cls_loss: logits must be rank 1, got {:?}",
                logits.shape()
            )));
        }
        let n = logits.shape()[0];
        if self.label >= n {
            return Err(Error::invalid(format!("cls_loss: label {} out of {n}", self.label)));
        }
        let data = logits.data();
        let (max, sum) = log_sum_exp(data, 0, 1, n);
        Ok((Tensor::scalar(max + sum.ln() - data[self.label]), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let logits = inputs[0];
        let n = logits.shape()[0];
        let g = grad_out.item();
        let data = logits.data();
        let (max, sum) = log_sum_exp(data, 0, 1, n);
        let mut grad = Tensor::zeros(logits.shape());
        let gd = grad.data_mut();
        for c in 0..n {
            let soft = (data[c] - max).exp() / sum;
            gd[c] = g * (soft - f64::from(c == self.label));
        }
        Ok(vec![Some(grad)])
    }
}

// ---------------------------------------------------------------------
// box regression loss

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Smooth-L1 over the 4 coordinates of the labeled class's prediction
/// row; all other rows get zero gradient.
#[derive(Debug, Clone)]
pub struct BoxLoss {
    /// 0-based class row (label - 1).
    pub row: usize,
    pub target: [f64; 4],
}

impl GraphOp for BoxLoss {
    fn name(&self) -> &'static str {
        "box_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let pred = inputs[0];
        if pred.shape().len() != 2 || pred.shape()[1] != 4 {
            return Err(Error::shape(format!(
                "box_loss: predictions must be [K,4], got {:?}",
                pred.shape()
            )));
        }
        if self.row >= pred.shape()[0] {
            return Err(Error::invalid(format!(
                "box_loss: class row {} out of {}",
                self.row,
                pred.shape()[0]
            )));
        }
        let data = pred.data();
        let mut loss = 0.0;
        for j in 0..4 {
            loss += smooth_l1(data[self.row * 4 + j] - self.target[j]);
        }
        Ok((Tensor::scalar(loss), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let pred = inputs[0];
        let g = grad_out.item();
        let mut grad = Tensor::zeros(pred.shape());
        {
            let gd = grad.data_mut();
            let data = pred.data();
            for j in 0..4 {
                gd[self.row * 4 + j] = g * smooth_l1_grad(data[self.row * 4 + j] - self.target[j]);
            }
        }
        Ok(vec![Some(grad)])
    }
}

// ---------------------------------------------------------------------
// keypoint loss

/// For each visible keypoint type, an m^2-way softmax cross-entropy over
/// its flattened grid against the one-hot cell; mean over visible
/// keypoints. Types are independent: no cross-type gradient.
#[derive(Debug, Clone)]
pub struct KeypointLoss {
    pub target: Vec<Option<usize>>,
}

impl GraphOp for KeypointLoss {
    fn name(&self) -> &'static str {
        "keypoint_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let logits = inputs[0];
        if logits.shape().len() != 3 {
            return Err(Error::shape(format!(
                "keypoint_loss: logits must be [Kp,m,m], got {:?}",
                logits.shape()
            )));
        }
        let kp = logits.shape()[0];
        if kp != self.target.len() {
            return Err(Error::shape(format!(
                "keypoint_loss: {} targets for {kp} keypoint types",
                self.target.len()
            )));
        }
        let m2 = logits.shape()[1] * logits.shape()[2];
        let data = logits.data();
        let mut loss = 0.0;
        let mut visible = 0usize;
        for (t, cell) in self.target.iter().enumerate() {
            let Some(cell) = cell else { continue };
            if *cell >= m2 {
                return Err(Error::invalid(format!("keypoint_loss: cell {cell} out of {m2}")));
            }
            let base = t * m2;
            let (max, sum) = log_sum_exp(&data[base..base + m2], 0, 1, m2);
            loss += max + sum.ln() - data[base + cell];
            visible += 1;
        }
        if visible == 0 {
            return Ok((Tensor::scalar(0.0), None));
        }
        Ok((Tensor::scalar(loss / visible as f64), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let logits = inputs[0];
        let m2 = logits.shape()[1] * logits.shape()[2];
        let visible = self.target.iter().filter(|c| c.is_some()).count();
        let mut grad = Tensor::zeros(logits.shape());
        if visible == 0 {
            return Ok(vec![Some(grad)]);
        }
        let g = grad_out.item() / visible as f64;
        let gd = grad.data_mut();
        let data = logits.data();
        for (t, cell) in self.target.iter().enumerate() {
            let Some(cell) = cell else { continue };
            let base = t * m2;
            let (max, sum) = log_sum_exp(&data[base..base + m2], 0, 1, m2);
            for p in 0..m2 {
                let soft = (data[base + p] - max).exp() / sum;
                gd[base + p] = g * (soft - f64::from(p == *cell));
            }
        }
        Ok(vec![Some(grad)])
    }
}

// ---------------------------------------------------------------------
// builders

/// Mask loss under the configured variant, applied to the branch's logits.
pub fn mask_loss(
    graph: &mut Graph,
    config: &HeadConfig,
    logits: NodeId,
    target: &MaskTarget,
) -> Result<NodeId> {
    let channel = config.mask_channel_for(target.class)?;
    match config.mask_variant {
        super::MaskVariant::SoftmaxMultinomial => graph.apply(
            MaskSoftmaxLoss { channel, target: target.grid.clone() },
            &[logits],
        ),
        _ => graph.apply(MaskSigmoidLoss { channel, target: target.grid.clone() }, &[logits]),
    }
}

pub fn cls_loss(graph: &mut Graph, logits: NodeId, label: usize) -> Result<NodeId> {
    graph.apply(ClsLoss { label }, &[logits])
}

/// `label` must be a foreground class (1-based); background RoIs carry no
/// box target.
pub fn box_loss(
    graph: &mut Graph,
    pred: NodeId,
    target: [f64; 4],
    label: usize,
) -> Result<NodeId> {
    if label == 0 {
        return Err(Error::invalid("box_loss: background label has no box target".to_string()));
    }
    graph.apply(BoxLoss { row: label - 1, target }, &[pred])
}

pub fn keypoint_loss(
    graph: &mut Graph,
    logits: NodeId,
    target: &KeypointTarget,
) -> Result<NodeId> {
    graph.apply(KeypointLoss { target: target.cells.clone() }, &[logits])
}

/// Mean of scalar loss terms; an empty batch contributes zero rather
/// than NaN.
pub fn mean_loss(graph: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    if terms.is_empty() {
        return Ok(graph.input(Tensor::scalar(0.0)));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = graph.add(acc, t)?;
    }
    Ok(graph.scale(acc, 1.0 / terms.len() as f64))
}

/// Unweighted sum of per-task components.
pub fn total_loss(graph: &mut Graph, components: &[NodeId]) -> Result<NodeId> {
    if components.is_empty() {
        return Ok(graph.input(Tensor::scalar(0.0)));
    }
    let mut acc = components[0];
    for &c in &components[1..] {
        acc = graph.add(acc, c)?;
    }
    Ok(acc)
}
