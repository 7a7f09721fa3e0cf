//! Positive/negative RoI sampling for head training.

use super::{encode_box, iou, BBox, BoxDelta};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One sampled RoI. `label` 0 is background; foreground labels are
/// 1-based class ids. Background samples carry no regression target.
#[derive(Debug, Clone)]
pub struct RoiSample {
    pub roi: BBox,
    pub label: usize,
    pub matched_gt: Option<usize>,
    pub regression_target: Option<BoxDelta>,
}

impl RoiSample {
    pub fn is_positive(&self) -> bool {
        self.label > 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Total RoIs to sample per image.
    pub rois_per_image: usize,
    /// Fraction of the sample reserved for positives (quota = floor).
    pub pos_fraction: f64,
    /// A proposal is positive iff its best ground-truth IoU reaches this.
    pub pos_iou: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { rois_per_image: 16, pos_fraction: 0.25, pos_iou: 0.5 }
    }
}

/// Match each proposal to its max-IoU ground truth; positives (IoU >=
/// pos_iou) carry the matched class and encoded regression target. Up to
/// floor(n * pos_fraction) positives are drawn uniformly, the remainder
/// is filled with negatives (positives are never duplicated).
///
/// Ground truths are (box, class) with 1-based classes.
pub fn match_and_sample(
    proposals: &[BBox],
    gts: &[(BBox, usize)],
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Vec<RoiSample>> {
    if cfg.rois_per_image == 0 {
        return Err(Error::invalid("sampler: rois_per_image must be positive".to_string()));
    }
    if !(cfg.pos_fraction > 0.0 && cfg.pos_fraction < 1.0) {
        return Err(Error::invalid("sampler: pos_fraction must be in (0, 1)".to_string()));
    }
    if proposals.is_empty() {
        return Ok(Vec::new());
    }

    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    let mut matches: Vec<Option<usize>> = Vec::with_capacity(proposals.len());
    for (i, p) in proposals.iter().enumerate() {
        let mut best = 0.0;
        let mut best_gt = None;
        for (gi, (gbox, _)) in gts.iter().enumerate() {
            let v = iou(p, gbox);
            if v > best {
                best = v;
                best_gt = Some(gi);
            }
        }
        matches.push(best_gt);
        if best >= cfg.pos_iou {
            pos_idx.push(i);
        } else {
            neg_idx.push(i);
        }
    }

    let quota = (cfg.rois_per_image as f64 * cfg.pos_fraction).floor() as usize;
    let take_pos = quota.min(pos_idx.len());
    let chosen_pos: Vec<usize> = rng.choose(pos_idx.len(), take_pos).iter().map(|&k| pos_idx[k]).collect();
    let take_neg = (cfg.rois_per_image - take_pos).min(neg_idx.len());
    let chosen_neg: Vec<usize> = rng.choose(neg_idx.len(), take_neg).iter().map(|&k| neg_idx[k]).collect();

    let mut samples = Vec::with_capacity(take_pos + take_neg);
    for i in chosen_pos {
        let gi = matches[i].expect("positive proposal always has a match");
        let (gbox, class) = &gts[gi];
        samples.push(RoiSample {
            roi: proposals[i],
            label: *class,
            matched_gt: Some(gi),
            regression_target: Some(encode_box(gbox, &proposals[i])?),
        });
    }
    for i in chosen_neg {
        samples.push(RoiSample {
            roi: proposals[i],
            label: 0,
            matched_gt: None,
            regression_target: None,
        });
    }
    Ok(samples)
}
