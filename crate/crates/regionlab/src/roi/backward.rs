//! Analytic adjoints of the RoI forwards, replayed from provenance.

use super::bilinear::neighbor_weights;
use super::Provenance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scatter output gradients back onto the feature map.
///
/// * average + bilinear: every sampling point scatters grad / n^2 to its
///   four neighbors with the bilinear weights;
/// * max over samples: the full cell gradient goes to the argmax sampling
///   point's four neighbors;
/// * max over cells (pool): the full cell gradient goes to the argmax cell.
///
/// Scatter order is channel-major then cell row-major, so accumulation is
/// deterministic.
pub fn roi_backward(
    grad_out: &Tensor,
    provenance: &Provenance,
    feature_shape: &[usize],
) -> Result<Tensor> {
    if feature_shape.len() != 3 {
        return Err(Error::shape(format!(
            "roi_backward: feature shape must be [C,H,W], got {feature_shape:?}"
        )));
    }
    let (c, h, w) = (feature_shape[0], feature_shape[1], feature_shape[2]);
    if grad_out.shape().len() != 3 || grad_out.shape()[0] != c {
        return Err(Error::shape(format!(
            "roi_backward: grad shape {:?} does not match {c} channels",
            grad_out.shape()
        )));
    }
    let cells = grad_out.shape()[1] * grad_out.shape()[2];
    if provenance.channels() != c || provenance.cells() != cells {
        return Err(Error::shape(format!(
            "roi_backward: provenance covers {}x{} (channels x cells), grad is {c}x{cells}",
            provenance.channels(),
            provenance.cells()
        )));
    }

    let mut grad_feature = Tensor::zeros(feature_shape);
    let gf = grad_feature.data_mut();
    let go = grad_out.data();
    match provenance {
        Provenance::BilinearAverage { samples_per_cell, points, .. } => {
            let inv = 1.0 / *samples_per_cell as f64;
            for ci in 0..c {
                for cell in 0..cells {
                    let g = go[ci * cells + cell] * inv;
                    if g == 0.0 {
                        continue;
                    }
                    for &(sx, sy) in
                        &points[cell * samples_per_cell..(cell + 1) * samples_per_cell]
                    {
                        for (ny, nx, weight) in neighbor_weights(sx, sy, h, w) {
                            if weight != 0.0 {
                                gf[(ci * h + ny) * w + nx] += g * weight;
                            }
                        }
                    }
                }
            }
        }
        Provenance::BilinearMax { argmax, .. } => {
            for ci in 0..c {
                for cell in 0..cells {
                    let g = go[ci * cells + cell];
                    if g == 0.0 {
                        continue;
                    }
                    let (sx, sy) = argmax[ci * cells + cell];
                    for (ny, nx, weight) in neighbor_weights(sx, sy, h, w) {
                        if weight != 0.0 {
                            gf[(ci * h + ny) * w + nx] += g * weight;
                        }
                    }
                }
            }
        }
        Provenance::CellMax { argmax, .. } => {
            for ci in 0..c {
                for cell in 0..cells {
                    if let Some((iy, ix)) = argmax[ci * cells + cell] {
                        gf[(ci * h + iy) * w + ix] += go[ci * cells + cell];
                    }
                }
            }
        }
    }
    Ok(grad_feature)
}

#[cfg(test)]
mod tests {
    use super::super::forward::{roi_align_forward, roi_pool_forward};
    use super::super::{Aggregation, RoiKind, RoiOpSpec};
    use super::*;
    use crate::boxes::BBox;

    fn interior_field() -> Tensor {
        let mut data = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                data.push(((i * 13 + j * 7) % 9) as f64);
            }
        }
        Tensor::from_vec(vec![1, 8, 8], data).unwrap()
    }

    #[test]
    fn average_scatter_is_partition_of_unity_per_bin() {
        // with all sampling neighbors in range, the weights scattered by
        // one output cell sum to exactly 1
        let f = interior_field();
        let spec = RoiOpSpec::new(RoiKind::Align, 2, 2, 2, Aggregation::Average, 1.0).unwrap();
        let roi = BBox::new(1.3, 1.7, 5.9, 6.1).unwrap();
        let out = roi_align_forward(&f, &roi, &spec).unwrap();
        for cell in 0..4 {
            let mut grad = Tensor::zeros(&[1, 2, 2]);
            grad.data_mut()[cell] = 1.0;
            let gf = roi_backward(&grad, &out.provenance, f.shape()).unwrap();
            let total: f64 = gf.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "cell {cell}: scatter sum {total}");
        }
    }

    #[test]
    fn pool_grad_lands_only_on_argmax_cells() {
        let f = interior_field();
        let spec = RoiOpSpec::new(RoiKind::Pool, 2, 2, 1, Aggregation::Max, 1.0).unwrap();
        let roi = BBox::new(0.0, 0.0, 8.0, 8.0).unwrap();
        let out = roi_pool_forward(&f, &roi, &spec).unwrap();
        let grad = Tensor::full(&[1, 2, 2], 1.0);
        let gf = roi_backward(&grad, &out.provenance, f.shape()).unwrap();
        let nonzero = gf.data().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= 4);
        let total: f64 = gf.data().iter().sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let f = interior_field();
        let spec = RoiOpSpec::new(RoiKind::Align, 2, 2, 2, Aggregation::Average, 1.0).unwrap();
        let roi = BBox::new(1.0, 1.0, 5.0, 5.0).unwrap();
        let out = roi_align_forward(&f, &roi, &spec).unwrap();
        let bad_grad = Tensor::zeros(&[1, 3, 3]);
        assert!(roi_backward(&bad_grad, &out.provenance, f.shape()).is_err());
        let good_grad = Tensor::zeros(&[1, 2, 2]);
        assert!(roi_backward(&good_grad, &out.provenance, &[2, 8, 8]).is_err());
    }
}
