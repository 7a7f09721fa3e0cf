//! Named parameters and SGD with momentum and weight decay.

use super::graph::Gradients;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Same shape as value, zero-initialized.
    pub momentum: Tensor,
    pub grad: Option<Tensor>,
}

/// Registration order is fixed and becomes the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("parameter '{name}' already registered")));
        }
        let momentum = Tensor::zeros(value.shape());
        let id = ParamId(self.params.len());
        self.params.push(Parameter { name: name.to_string(), value, momentum, grad: None });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn momentum(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].momentum
    }

    pub fn set_momentum(&mut self, id: ParamId, buffer: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if buffer.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "momentum for '{}': {:?} vs value {:?}",
                p.name,
                buffer.shape(),
                p.value.shape()
            )));
        }
        p.momentum = buffer;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add one backward pass's gradients into the grad slots. Call
    /// `zero_grads` first so untouched parameters end up with zero grad.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(Error::shape(format!(
                            "gradient for '{}': {:?} vs value {:?}",
                            p.name,
                            g.shape(),
                            acc.shape()
                        )));
                    }
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// buffer <- momentum * buffer + grad + weight_decay * value;
    /// value  <- value - lr * buffer.
    pub fn sgd_step(&mut self, cfg: &SgdConfig) -> Result<()> {
        for p in &mut self.params {
            let grad = p.grad.as_ref().ok_or_else(|| {
                Error::invalid(format!("sgd_step: parameter '{}' has no gradient", p.name))
            })?;
            let value = p.value.data_mut();
            let buf = p.momentum.data_mut();
            let g = grad.data();
            for i in 0..value.len() {
                buf[i] = cfg.momentum * buf[i] + g[i] + cfg.weight_decay * value[i];
                value[i] -= cfg.lr * buf[i];
            }
        }
        Ok(())
    }

    /// Total parameter count in a set of ids (weights + biases).
    pub fn count_in(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.value(*id).numel()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}
