//! Run a trained model over an evaluation dataset and produce the
//! metric report: mask and box AP families plus, when keypoints are
//! enabled, a PCK-style localization score.

use std::collections::BTreeMap;
use std::path::Path;

use crate::boxes::iou as box_iou;
use crate::error::Result;
use crate::eval::{summarize, EvalConfig, EvalDetection, EvalGroundTruth, EvalImage, IouKind};
use crate::pipeline::{infer, Model};
use crate::postproc::DetectionResult;
use crate::synth::{Dataset, Scene};

/// Keypoint hit radius, in heatmap cells (Chebyshev distance).
pub const PCK_RADIUS_CELLS: usize = 2;

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// Flat metric table: mask_ap*, box_ap*, and kp_pck2 when present.
    pub rows: BTreeMap<String, f64>,
}

fn eval_config_from(model: &Model, kind: IouKind) -> EvalConfig {
    EvalConfig {
        iou_thresholds: model.config.iou_thresholds.clone(),
        iou_kind: kind,
        max_detections_per_image: model.config.max_detections,
    }
}

/// Greedy box matching of detections to ground truths (score order,
/// same class, IoU >= 0.5); returns the matched gt index per detection.
fn match_for_keypoints(dets: &[DetectionResult], scene: &Scene) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].score.partial_cmp(&dets[a].score).expect("finite scores").then(a.cmp(&b))
    });
    let mut taken = vec![false; scene.annotations.len()];
    let mut matched = vec![None; dets.len()];
    for &di in &order {
        let det = &dets[di];
        let mut best = 0.5;
        let mut best_gt = None;
        for (gi, ann) in scene.annotations.iter().enumerate() {
            if taken[gi] || ann.class != det.class {
                continue;
            }
            let v = box_iou(&det.bbox, &ann.bbox);
            if v >= best {
                best = v;
                best_gt = Some(gi);
            }
        }
        if let Some(gi) = best_gt {
            taken[gi] = true;
            matched[di] = Some(gi);
        }
    }
    matched
}

/// Cell of an image point inside a box at resolution r (clamped).
fn cell_of(x: f64, y: f64, bbox: &crate::boxes::BBox, r: usize) -> (usize, usize) {
    let col = ((x - bbox.x1) / bbox.width() * r as f64).floor().clamp(0.0, r as f64 - 1.0);
    let row = ((y - bbox.y1) / bbox.height() * r as f64).floor().clamp(0.0, r as f64 - 1.0);
    (row as usize, col as usize)
}

/// Fraction of visible ground-truth keypoints whose predicted heatmap
/// argmax lands within [`PCK_RADIUS_CELLS`] of the true cell, measured
/// in the matched detection's box grid. Unmatched ground truths count
/// as misses. This is a desk-scale localization score, not comparable
/// to OKS-based keypoint AP.
fn accumulate_pck(
    dets: &[DetectionResult],
    scene: &Scene,
    resolution: usize,
    hits: &mut usize,
    total: &mut usize,
) {
    let matched = match_for_keypoints(dets, scene);
    // invert: per gt, the matching detection
    let mut det_of_gt: Vec<Option<usize>> = vec![None; scene.annotations.len()];
    for (di, gi) in matched.iter().enumerate() {
        if let Some(gi) = gi {
            det_of_gt[*gi] = Some(di);
        }
    }
    for (gi, ann) in scene.annotations.iter().enumerate() {
        for (kp_index, &(x, y, visible)) in ann.keypoints.iter().enumerate() {
            if !visible {
                continue;
            }
            *total += 1;
            let Some(di) = det_of_gt[gi] else { continue };
            let det = &dets[di];
            let Some(heatmaps) = &det.keypoint_heatmaps else { continue };
            if det.bbox.width() <= 0.0 || det.bbox.height() <= 0.0 {
                continue;
            }
            if x < det.bbox.x1 || x >= det.bbox.x2 || y < det.bbox.y1 || y >= det.bbox.y2 {
                continue; // true keypoint outside the predicted box: miss
            }
            let (r, rw) = (heatmaps.shape()[1], heatmaps.shape()[2]);
            debug_assert_eq!(r, resolution);
            let base = kp_index * r * rw;
            let mut best = f64::NEG_INFINITY;
            let mut best_cell = 0usize;
            for p in 0..r * rw {
                if heatmaps.data()[base + p] > best {
                    best = heatmaps.data()[base + p];
                    best_cell = p;
                }
            }
            let (pred_row, pred_col) = (best_cell / rw, best_cell % rw);
            let (gt_row, gt_col) = cell_of(x, y, &det.bbox, r);
            let dist = pred_row.abs_diff(gt_row).max(pred_col.abs_diff(gt_col));
            if dist <= PCK_RADIUS_CELLS {
                *hits += 1;
            }
        }
    }
}

/// Run inference over every scene of `dataset` and evaluate.
pub fn evaluate_model(model: &Model, dataset: &Dataset) -> Result<EvalOutcome> {
    let mut images: Vec<EvalImage> = Vec::with_capacity(dataset.len());
    let mut kp_hits = 0usize;
    let mut kp_total = 0usize;
    for i in 0..dataset.len() {
        let scene = dataset.scene(i)?;
        let image_index = dataset.meta.start_index + i as u64;
        let results = infer(model, &scene, image_index)?;
        let dets: Vec<DetectionResult> = results.iter().map(|(d, _)| d.clone()).collect();
        if model.keypoint_branch.is_some() {
            accumulate_pck(
                &dets,
                &scene,
                model.config.heads.keypoint_resolution,
                &mut kp_hits,
                &mut kp_total,
            );
        }
        let detections = results
            .iter()
            .map(|(d, m)| EvalDetection {
                class: d.class,
                score: d.score,
                bbox: d.bbox,
                mask: Some(m.mask.clone()),
            })
            .collect();
        let ground_truths = scene
            .annotations
            .iter()
            .map(|a| EvalGroundTruth { class: a.class, bbox: a.bbox, mask: Some(a.mask.clone()) })
            .collect();
        images.push(EvalImage { detections, ground_truths });
    }

    let mut rows = BTreeMap::new();
    let box_report = summarize(&images, &eval_config_from(model, IouKind::Box))?;
    rows.extend(box_report.rows("box"));
    if model.mask_branch.is_some() {
        let mask_report = summarize(&images, &eval_config_from(model, IouKind::Mask))?;
        rows.extend(mask_report.rows("mask"));
    }
    if model.keypoint_branch.is_some() {
        let pck = if kp_total == 0 { 0.0 } else { kp_hits as f64 / kp_total as f64 };
        rows.insert("kp_pck2".to_string(), pck);
    }
    Ok(EvalOutcome { rows })
}

/// Write a report as a flat `metric = value` table with provenance
/// comments; the report is reproducible from (config, seed) alone.
pub fn write_report(
    path: &Path,
    rows: &BTreeMap<String, f64>,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("# regionlab report\n# config_hash = {config_hash}\n# seed = {seed}\n"));
    for (k, v) in rows {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Serialize detections: one record per instance with class, score, box,
/// and the full-image mask as run-length counts (alternating, starting
/// with a zero run, row-major).
pub fn write_detections(
    path: &Path,
    per_scene: &[(u64, Vec<(crate::postproc::DetectionResult, crate::postproc::InstanceMask)>)],
) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::from("# regionlab detections v1\n");
    for (scene_index, results) in per_scene {
        let _ = writeln!(text, "scene {scene_index} {}", results.len());
        for (det, mask) in results {
            let runs = crate::mask::encode_rle(&mask.mask);
            let runs_text: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
            let _ = writeln!(
                text,
                "det {} {} {} {} {} {} rle {}",
                det.class,
                det.score,
                det.bbox.x1,
                det.bbox.y1,
                det.bbox.x2,
                det.bbox.y2,
                runs_text.join(",")
            );
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse a report file back into its metric rows.
pub fn read_report(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| crate::error::Error::parse(format!("bad report value '{v}'")))?;
            rows.insert(k.trim().to_string(), value);
        }
    }
    Ok(rows)
}
