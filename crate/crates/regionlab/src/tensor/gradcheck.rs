//! Central finite-difference verification of analytic gradients.
//!
//! Coordinates sitting on a nonsmooth point (relu/max kink, argmax or
//! quantization switch) are detected by comparing the two one-sided
//! difference quotients and reported as excluded rather than failed.

use super::graph::Graph;
use super::optim::{ParamId, ParamSet};
use crate::error::{Error, Result};

/// Step for central differences; paired with [`GRAD_REL_TOL`].
pub const FD_STEP: f64 = 1e-5;

/// Relative error bound every differentiable op must meet in f64.
pub const GRAD_REL_TOL: f64 = 1e-6;

/// One-sided slopes disagreeing by more than this (relative) mark a kink.
const KINK_TOL: f64 = 1e-3;

/// Relative-error denominators are floored here so coordinates with
/// near-zero gradients are judged on absolute error at the same scale.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub max_rel_err: f64,
    /// Coordinate index of the worst error within the checked parameter.
    pub worst_coord: Option<usize>,
    pub checked: usize,
    pub excluded: usize,
}

impl GradCheckOutcome {
    pub fn passes(&self) -> bool {
        self.max_rel_err < GRAD_REL_TOL
    }
}

/// Compare the analytic gradient of `param` against central finite
/// differences of the scalar loss produced by `build`. The builder is
/// re-invoked for every perturbed evaluation, so it must be a pure
/// function of the parameter values.
pub fn grad_check<F>(
    params: &mut ParamSet,
    param: ParamId,
    step: f64,
    build: F,
) -> Result<GradCheckOutcome>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<super::graph::NodeId>,
{
    if step <= 0.0 {
        return Err(Error::invalid("grad_check: step must be positive".to_string()));
    }
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::invalid("grad_check: loss must be scalar".to_string()));
        }
        Ok(g.value(loss).item())
    };

    // analytic gradient at the base point
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        let grads = g.backward(loss)?;
        grads
            .params()
            .iter()
            .find(|(id, _)| *id == param)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| super::Tensor::zeros(params.value(param).shape()))
    };
    let f0 = eval(params)?;

    let n = params.value(param).numel();
    let mut outcome =
        GradCheckOutcome { max_rel_err: 0.0, worst_coord: None, checked: 0, excluded: 0 };
    for i in 0..n {
        let orig = params.value(param).data()[i];
        params.value_mut(param).data_mut()[i] = orig + step;
        let f_plus = eval(params)?;
        params.value_mut(param).data_mut()[i] = orig - step;
        let f_minus = eval(params)?;
        params.value_mut(param).data_mut()[i] = orig;

        let d_plus = (f_plus - f0) / step;
        let d_minus = (f0 - f_minus) / step;
        let slope_scale = d_plus.abs().max(d_minus.abs()).max(1.0);
        if (d_plus - d_minus).abs() > KINK_TOL * slope_scale {
            outcome.excluded += 1;
            continue;
        }

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        let rel = (a - numeric).abs() / denom;
        outcome.checked += 1;
        if rel > outcome.max_rel_err {
            outcome.max_rel_err = rel;
            outcome.worst_coord = Some(i);
        }
    }
    Ok(outcome)
}
