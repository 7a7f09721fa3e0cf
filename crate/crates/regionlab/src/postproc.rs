//! Inference-time assembly: per-class NMS and top-k selection, k-th mask
//! selection, probability pasting into the full image, and keypoint
//! decoding.

use crate::boxes::{nms, BBox};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, MaskVariant};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// One predicted instance. `class` is 1-based (foreground only); `score`
/// comes from the classification softmax. The mask slot holds the
/// selected class's m x m logits once the mask pass has run.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
    pub mask_logits: Option<Tensor>,
    pub keypoint_heatmaps: Option<Tensor>,
}

/// Full-image binary mask owned by one detection.
#[derive(Debug, Clone)]
pub struct InstanceMask {
    pub mask: BinaryMask,
    pub detection: usize,
}

/// Per-class NMS followed by a global top-k cut by score (ties keep the
/// earlier candidate). The mask branch is meant to run only on the
/// survivors.
pub fn select_detections(
    scored_boxes: &[(BBox, usize, f64)],
    nms_threshold: f64,
    score_threshold: f64,
    top_k: usize,
) -> Result<Vec<DetectionResult>> {
    if !(0.0..=1.0).contains(&nms_threshold) || !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::invalid("select_detections: thresholds must be in [0,1]".to_string()));
    }
    if top_k == 0 {
        return Err(Error::invalid("select_detections: top_k must be >= 1".to_string()));
    }
    let mut classes: Vec<usize> = scored_boxes.iter().map(|(_, c, _)| *c).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut survivors: Vec<usize> = Vec::new();
    for class in classes {
        let members: Vec<usize> = (0..scored_boxes.len())
            .filter(|&i| scored_boxes[i].1 == class && scored_boxes[i].2 >= score_threshold)
            .collect();
        let class_boxes: Vec<(BBox, f64)> =
            members.iter().map(|&i| (scored_boxes[i].0, scored_boxes[i].2)).collect();
        for kept in nms(&class_boxes, nms_threshold) {
            survivors.push(members[kept]);
        }
    }
    survivors.sort_by(|&a, &b| {
        scored_boxes[b]
            .2
            .partial_cmp(&scored_boxes[a].2)
            .expect("detection scores must be finite")
            .then(a.cmp(&b))
    });
    survivors.truncate(top_k);
    Ok(survivors
        .into_iter()
        .map(|i| {
            let (bbox, class, score) = scored_boxes[i];
            DetectionResult { bbox, class, score, mask_logits: None, keypoint_heatmaps: None }
        })
        .collect())
}

/// The k-th class's mask channel (class-agnostic configs have a single
/// channel returned regardless of k).
pub fn select_mask(mask_logits: &Tensor, config: &HeadConfig, class: usize) -> Result<Tensor> {
    if mask_logits.shape().len() != 3 {
        return Err(Error::shape(format!(
            "select_mask: logits must be [K,m,m], got {:?}",
            mask_logits.shape()
        )));
    }
    let channel = config.mask_channel_for(class)?;
    if channel >= mask_logits.shape()[0] {
        return Err(Error::shape(format!(
            "select_mask: channel {channel} out of {}",
            mask_logits.shape()[0]
        )));
    }
    let (m, mw) = (mask_logits.shape()[1], mask_logits.shape()[2]);
    let start = channel * m * mw;
    Tensor::from_vec(vec![m, mw], mask_logits.data()[start..start + m * mw].to_vec())
}

/// Per-pixel mask probabilities for class `class`: sigmoid of the
/// selected channel, except the multinomial variant where the k-th
/// softmax probability is used.
pub fn mask_probabilities(
    mask_logits: &Tensor,
    config: &HeadConfig,
    class: usize,
) -> Result<Tensor> {
    match config.mask_variant {
        MaskVariant::SoftmaxMultinomial => {
            let channel = config.mask_channel_for(class)?;
            let (k1, m, mw) =
                (mask_logits.shape()[0], mask_logits.shape()[1], mask_logits.shape()[2]);
            let data = mask_logits.data();
            let mut out = Tensor::zeros(&[m, mw]);
            for p in 0..m * mw {
                let mut max = f64::NEG_INFINITY;
                for c in 0..k1 {
                    max = max.max(data[c * m * mw + p]);
                }
                let mut sum = 0.0;
                for c in 0..k1 {
                    sum += (data[c * m * mw + p] - max).exp();
                }
                out.data_mut()[p] = (data[channel * m * mw + p] - max).exp() / sum;
            }
            Ok(out)
        }
        _ => {
            let mut probs = select_mask(mask_logits, config, class)?;
            for v in probs.data_mut() {
                *v = crate::tensor::ops::sigmoid_scalar(*v);
            }
            Ok(probs)
        }
    }
}

/// Probability value at continuous mask coordinates (cell-center field,
/// borders replicated).
fn sample_probs(probs: &Tensor, u: f64, v: f64) -> f64 {
    let (mh, mw) = (probs.shape()[0], probs.shape()[1]);
    let u = u.clamp(0.0, mw as f64 - 1.0);
    let v = v.clamp(0.0, mh as f64 - 1.0);
    let u0 = u.floor();
    let v0 = v.floor();
    let (du, dv) = (u - u0, v - v0);
    let (c0, r0) = (u0 as usize, v0 as usize);
    let c1 = (c0 + 1).min(mw - 1);
    let r1 = (r0 + 1).min(mh - 1);
    let d = probs.data();
    (1.0 - dv) * ((1.0 - du) * d[r0 * mw + c0] + du * d[r0 * mw + c1])
        + dv * ((1.0 - du) * d[r1 * mw + c0] + du * d[r1 * mw + c1])
}

/// Bilinear-resize the m x m probability grid to the box's pixel extent,
/// place it at the box location, and binarize at `threshold` with a >=
/// comparison. Pixels outside the image are clipped; a zero-area box
/// produces an empty mask.
pub fn paste_mask(
    mask_probs: &Tensor,
    bbox: &BBox,
    image_h: usize,
    image_w: usize,
    threshold: f64,
    detection: usize,
) -> Result<InstanceMask> {
    if mask_probs.shape().len() != 2 {
        return Err(Error::shape(format!(
            "paste_mask: probabilities must be [m,m], got {:?}",
            mask_probs.shape()
        )));
    }
    let mut out = BinaryMask::zeros(image_h, image_w);
    let (w, h) = (bbox.width(), bbox.height());
    if w <= 0.0 || h <= 0.0 {
        return Ok(InstanceMask { mask: out, detection });
    }
    let (mh, mw) = (mask_probs.shape()[0], mask_probs.shape()[1]);
    let px0 = bbox.x1.floor().max(0.0) as usize;
    let py0 = bbox.y1.floor().max(0.0) as usize;
    let px1 = (bbox.x2.ceil().min(image_w as f64)).max(0.0) as usize;
    let py1 = (bbox.y2.ceil().min(image_h as f64)).max(0.0) as usize;
    for py in py0..py1 {
        let cy = py as f64 + 0.5;
        if cy < bbox.y1 || cy >= bbox.y2 {
            continue;
        }
        let v = (cy - bbox.y1) / h * mh as f64 - 0.5;
        for px in px0..px1 {
            let cx = px as f64 + 0.5;
            if cx < bbox.x1 || cx >= bbox.x2 {
                continue;
            }
            let u = (cx - bbox.x1) / w * mw as f64 - 0.5;
            if sample_probs(mask_probs, u, v) >= threshold {
                out.set(py, px, 1);
            }
        }
    }
    Ok(InstanceMask { mask: out, detection })
}

/// Argmax cell of each keypoint heatmap mapped back to image coordinates
/// at the cell center.
pub fn decode_keypoints(heatmaps: &Tensor, bbox: &BBox) -> Vec<(f64, f64)> {
    let (kp, r, rw) = (heatmaps.shape()[0], heatmaps.shape()[1], heatmaps.shape()[2]);
    let data = heatmaps.data();
    let mut out = Vec::with_capacity(kp);
    for t in 0..kp {
        let base = t * r * rw;
        let mut best = f64::NEG_INFINITY;
        let mut best_cell = 0usize;
        for p in 0..r * rw {
            if data[base + p] > best {
                best = data[base + p];
                best_cell = p;
            }
        }
        let (row, col) = (best_cell / rw, best_cell % rw);
        out.push((
            bbox.x1 + (col as f64 + 0.5) / rw as f64 * bbox.width(),
            bbox.y1 + (row as f64 + 0.5) / r as f64 * bbox.height(),
        ));
    }
    out
}
