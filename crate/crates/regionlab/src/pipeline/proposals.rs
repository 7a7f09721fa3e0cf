//! Proposal sources: decoded RPN outputs or oracle boxes (jittered
//! ground truths plus random background boxes) that isolate head
//! behavior from proposal quality.

use crate::boxes::{decode_box, nms, BBox};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::rng::Rng;
use crate::synth::InstanceAnnotation;
use crate::tensor::ops::sigmoid_scalar;
use crate::tensor::Tensor;

use super::model::{anchor_position, RpnOutputs};

/// Jittered copies of every ground-truth box plus uniform background
/// boxes. Jitter magnitude is a fraction of the box extent per
/// coordinate; all boxes are clipped to the image.
pub fn oracle_proposals(
    annotations: &[InstanceAnnotation],
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> Vec<BBox> {
    let (w, h) = (config.scene.image_w as f64, config.scene.image_h as f64);
    let j = config.oracle_jitter;
    let mut out = Vec::new();
    for ann in annotations {
        for _ in 0..config.oracle_copies {
            let bw = ann.bbox.width();
            let bh = ann.bbox.height();
            let x1 = ann.bbox.x1 + rng.range_f64(-j, j) * bw;
            let y1 = ann.bbox.y1 + rng.range_f64(-j, j) * bh;
            let x2 = ann.bbox.x2 + rng.range_f64(-j, j) * bw;
            let y2 = ann.bbox.y2 + rng.range_f64(-j, j) * bh;
            let candidate = BBox {
                x1: x1.min(x2 - 1.0),
                y1: y1.min(y2 - 1.0),
                x2: x2.max(x1 + 1.0),
                y2: y2.max(y1 + 1.0),
            }
            .clip(w, h);
            if candidate.width() >= 2.0 && candidate.height() >= 2.0 {
                out.push(candidate);
            }
        }
    }
    for _ in 0..config.oracle_background {
        let bw = rng.range_f64(8.0, w / 2.0);
        let bh = rng.range_f64(8.0, h / 2.0);
        let x1 = rng.range_f64(0.0, w - bw);
        let y1 = rng.range_f64(0.0, h - bh);
        out.push(BBox { x1, y1, x2: x1 + bw, y2: y1 + bh });
    }
    out
}

/// Decode RPN outputs into scored proposals: deltas applied to anchors,
/// clipped to the image, NMS at the configured threshold, top-n by
/// objectness (ties keep the lower anchor index).
pub fn rpn_proposals(
    objectness: &Tensor,
    deltas: &Tensor,
    outputs: &RpnOutputs,
    config: &ExperimentConfig,
) -> Result<Vec<(BBox, f64)>> {
    let set = &outputs.anchors;
    let (grid_h, grid_w) = (set.grid_h, set.grid_w);
    let (w, h) = (config.scene.image_w as f64, config.scene.image_h as f64);
    let obj = objectness.data();
    let del = deltas.data();
    let cells = grid_h * grid_w;

    let mut scored: Vec<(BBox, f64)> = Vec::with_capacity(set.boxes.len());
    for idx in 0..set.boxes.len() {
        let (row, col, a) = anchor_position(set, idx);
        let cell = row * grid_w + col;
        let score = sigmoid_scalar(obj[a * cells + cell]);
        let delta = [
            del[(4 * a) * cells + cell],
            del[(4 * a + 1) * cells + cell],
            del[(4 * a + 2) * cells + cell],
            del[(4 * a + 3) * cells + cell],
        ];
        let decoded = decode_box(&delta, &set.boxes[idx])?.clip(w, h);
        if decoded.width() >= 1.0 && decoded.height() >= 1.0 {
            scored.push((decoded, score));
        }
    }
    let kept = nms(&scored, config.rpn_nms_threshold);
    let mut proposals: Vec<(BBox, f64)> =
        kept.into_iter().map(|i| scored[i]).collect();
    proposals.truncate(config.rpn_top_n);
    Ok(proposals)
}
