//! COCO-style evaluation: mask/box IoU matching, 101-point interpolated
//! average precision, and AP/AP50/AP75 summaries.

use std::collections::BTreeMap;

use crate::boxes::{iou as box_iou, BBox};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouKind {
    Mask,
    Box,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Strictly increasing thresholds in (0, 1].
    pub iou_thresholds: Vec<f64>,
    pub iou_kind: IouKind,
    pub max_detections_per_image: usize,
}

impl EvalConfig {
    pub fn coco(iou_kind: IouKind) -> Self {
        EvalConfig {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            iou_kind,
            max_detections_per_image: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::invalid("eval: iou_thresholds must be nonempty".to_string()));
        }
        for w in self.iou_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("eval: iou_thresholds must be strictly increasing".to_string()));
            }
        }
        if self.iou_thresholds.iter().any(|&t| t <= 0.0 || t > 1.0) {
            return Err(Error::invalid("eval: iou_thresholds must lie in (0,1]".to_string()));
        }
        Ok(())
    }
}

/// One detection prepared for evaluation.
#[derive(Debug, Clone)]
pub struct EvalDetection {
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
}

/// One ground-truth instance prepared for evaluation.
#[derive(Debug, Clone)]
pub struct EvalGroundTruth {
    pub class: usize,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
}

/// Detections and ground truth of a single image.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub detections: Vec<EvalDetection>,
    pub ground_truths: Vec<EvalGroundTruth>,
}

/// |a and b| / |a or b|; both-empty is defined as 0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape(format!(
            "mask_iou: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

fn pair_iou(det: &EvalDetection, gt: &EvalGroundTruth, kind: IouKind) -> Result<f64> {
    match kind {
        IouKind::Box => Ok(box_iou(&det.bbox, &gt.bbox)),
        IouKind::Mask => {
            let (Some(dm), Some(gm)) = (&det.mask, &gt.mask) else {
                return Err(Error::invalid("mask evaluation requires masks on both sides".to_string()));
            };
            mask_iou(dm, gm)
        }
    }
}

/// Pairwise det x gt IoU matrix for one image; class-mismatched pairs
/// hold -1 so matching can skip them without recomputing.
fn iou_matrix(
    detections: &[EvalDetection],
    ground_truths: &[EvalGroundTruth],
    kind: IouKind,
) -> Result<Vec<f64>> {
    let mut matrix = vec![-1.0; detections.len() * ground_truths.len()];
    for (di, det) in detections.iter().enumerate() {
        for (gi, gt) in ground_truths.iter().enumerate() {
            if gt.class == det.class {
                matrix[di * ground_truths.len() + gi] = pair_iou(det, gt, kind)?;
            }
        }
    }
    Ok(matrix)
}

fn match_with_matrix(
    detections: &[EvalDetection],
    num_gts: usize,
    matrix: &[f64],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .expect("detection scores must be finite")
            .then(a.cmp(&b))
    });
    let mut gt_taken = vec![false; num_gts];
    let mut flags = vec![false; detections.len()];
    for &di in &order {
        let mut best = 0.0;
        let mut best_gt: Option<usize> = None;
        for gi in 0..num_gts {
            if gt_taken[gi] {
                continue;
            }
            let v = matrix[di * num_gts + gi];
            if v > best {
                best = v;
                best_gt = Some(gi);
            }
        }
        if let Some(gi) = best_gt {
            if best >= iou_threshold {
                gt_taken[gi] = true;
                flags[di] = true;
            }
        }
    }
    flags
}

/// Greedy single-match protocol within one image: walking detections by
/// descending score (ties by input order), each matches the highest-IoU
/// unmatched same-class ground truth when that IoU reaches the
/// threshold. Returns one TP flag per detection, in input order.
pub fn match_detections(
    detections: &[EvalDetection],
    ground_truths: &[EvalGroundTruth],
    iou_threshold: f64,
    kind: IouKind,
) -> Result<Vec<bool>> {
    let matrix = iou_matrix(detections, ground_truths, kind)?;
    Ok(match_with_matrix(detections, ground_truths.len(), &matrix, iou_threshold))
}

/// Precision/recall curve with the interpolated (right-max) envelope
/// sampled at evenly spaced recall points.
#[derive(Debug, Clone)]
pub struct PrCurve {
    pub recall_grid: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// 101-point interpolated AP from (score, is_tp) records. Returns None
/// when there is no ground truth (AP undefined, excluded from averages).
pub fn average_precision(
    flags: &[(f64, bool)],
    num_gt: usize,
    interpolation_points: usize,
) -> Option<PrCurve> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|&a, &b| {
        flags[b].0.partial_cmp(&flags[a].0).expect("scores must be finite").then(a.cmp(&b))
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recalls = Vec::with_capacity(flags.len());
    let mut precisions = Vec::with_capacity(flags.len());
    for &i in &order {
        if flags[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / num_gt as f64);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    // envelope: running max from the right
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let points = interpolation_points.max(2);
    let mut grid = Vec::with_capacity(points);
    let mut sampled = Vec::with_capacity(points);
    let mut total = 0.0;
    for p in 0..points {
        let r = p as f64 / (points - 1) as f64;
        // precision at the first recorded recall >= r, else 0
        let prec = recalls
            .iter()
            .position(|&rec| rec >= r - 1e-12)
            .map_or(0.0, |idx| envelope[idx]);
        grid.push(r);
        sampled.push(prec);
        total += prec;
    }
    Some(PrCurve { recall_grid: grid, precision: sampled, ap: total / points as f64 })
}

/// Metric report: AP averaged over classes then thresholds, the fixed
/// AP50/AP75 slices, and the per-threshold series behind them.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<(f64, f64)>,
    pub classes_evaluated: usize,
}

impl EvalReport {
    /// Flatten into (metric name -> value) rows with a task prefix.
    pub fn rows(&self, prefix: &str) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert(format!("{prefix}_ap"), self.ap);
        out.insert(format!("{prefix}_ap50"), self.ap50);
        out.insert(format!("{prefix}_ap75"), self.ap75);
        for (t, v) in &self.per_threshold {
            out.insert(format!("{prefix}_ap_t{:02}", (t * 100.0).round() as usize), *v);
        }
        out
    }
}

/// Evaluate a dataset: detections pooled per class across images, matched
/// per image at each threshold, averaged per class then over thresholds.
/// Classes with no ground truth anywhere are excluded. Rejects an
/// evaluation set with no ground truth at all.
pub fn summarize(images: &[EvalImage], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut classes: Vec<usize> = images
        .iter()
        .flat_map(|img| img.ground_truths.iter().map(|g| g.class))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::invalid("summarize: evaluation set has no ground truth".to_string()));
    }

    // truncate detections per image by score before matching
    let truncated: Vec<EvalImage> = images
        .iter()
        .map(|img| {
            let mut idx: Vec<usize> = (0..img.detections.len()).collect();
            idx.sort_by(|&a, &b| {
                img.detections[b]
                    .score
                    .partial_cmp(&img.detections[a].score)
                    .expect("scores must be finite")
                    .then(a.cmp(&b))
            });
            idx.truncate(config.max_detections_per_image);
            idx.sort_unstable(); // keep original order within the cut
            EvalImage {
                detections: idx.iter().map(|&i| img.detections[i].clone()).collect(),
                ground_truths: img.ground_truths.clone(),
            }
        })
        .collect();

    // pairwise IoUs are threshold-independent: compute them once per image
    let matrices: Vec<Vec<f64>> = truncated
        .iter()
        .map(|img| iou_matrix(&img.detections, &img.ground_truths, config.iou_kind))
        .collect::<Result<_>>()?;

    let mut per_threshold = Vec::with_capacity(config.iou_thresholds.len());
    for &threshold in &config.iou_thresholds {
        let image_flags: Vec<Vec<bool>> = truncated
            .iter()
            .zip(&matrices)
            .map(|(img, matrix)| {
                match_with_matrix(&img.detections, img.ground_truths.len(), matrix, threshold)
            })
            .collect();
        let mut class_aps = Vec::with_capacity(classes.len());
        for &class in &classes {
            let mut flags: Vec<(f64, bool)> = Vec::new();
            let mut num_gt = 0usize;
            for (img, tp_flags) in truncated.iter().zip(&image_flags) {
                num_gt += img.ground_truths.iter().filter(|g| g.class == class).count();
                for (det, &tp) in img.detections.iter().zip(tp_flags) {
                    if det.class == class {
                        flags.push((det.score, tp));
                    }
                }
            }
            if let Some(curve) = average_precision(&flags, num_gt, 101) {
                class_aps.push(curve.ap);
            }
        }
        let mean = class_aps.iter().sum::<f64>() / class_aps.len().max(1) as f64;
        per_threshold.push((threshold, mean));
    }

    let ap = per_threshold.iter().map(|(_, v)| v).sum::<f64>() / per_threshold.len() as f64;
    let slice = |t: f64| {
        per_threshold
            .iter()
            .find(|(x, _)| (x - t).abs() < 1e-9)
            .map_or(f64::NAN, |(_, v)| *v)
    };
    Ok(EvalReport {
        ap,
        ap50: slice(0.50),
        ap75: slice(0.75),
        per_threshold,
        classes_evaluated: classes.len(),
    })
}
