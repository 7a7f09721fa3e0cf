//! Image-centric training: sample an image, make proposals, sample RoIs,
//! run the heads, sum the multi-task loss, backpropagate, step.

use std::any::Any;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::boxes::{encode_box, iou, match_and_sample, BBox, SamplerConfig};
use crate::config::{ExperimentConfig, ProposalKind};
use crate::error::{Error, Result};
use crate::heads::{
    box_loss, cls_loss, keypoint_loss, make_keypoint_target, make_mask_target, mask_loss,
    mean_loss, total_loss,
};
use crate::rng::Rng;
use crate::synth::{Dataset, Scene};
use crate::tensor::ops::sigmoid_scalar;
use crate::tensor::{Graph, GraphOp, NodeId, SgdConfig, Tensor};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointState};
use super::model::Model;
use super::proposals::{oracle_proposals, rpn_proposals};

/// Stream tags deriving independent rng streams from one run seed.
const TRAIN_STREAM: u64 = 0x7241;

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub mask: f64,
    pub keypoint: f64,
    pub rpn_obj: f64,
    pub rpn_box: f64,
    pub positives: usize,
}

impl TrainLogRow {
    pub fn header() -> &'static str {
        "iteration\tlr\ttotal\tcls\tbox\tmask\tkeypoint\trpn_obj\trpn_box\tpositives"
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.lr,
            self.total,
            self.cls,
            self.bbox,
            self.mask,
            self.keypoint,
            self.rpn_obj,
            self.rpn_box,
            self.positives
        )
    }
}

pub struct TrainArtifacts {
    pub model: Model,
    pub log: Vec<TrainLogRow>,
    pub final_checkpoint: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

// ---------------------------------------------------------------------
// RPN losses

/// Mean binary cross-entropy over sampled anchors; input is the [A,h,w]
/// objectness map.
struct RpnObjectnessLoss {
    /// (anchor channel, row, col, is-positive)
    samples: Vec<(usize, usize, usize, bool)>,
}

impl GraphOp for RpnObjectnessLoss {
    fn name(&self) -> &'static str {
        "rpn_objectness_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let obj = inputs[0];
        let (h, w) = (obj.shape()[1], obj.shape()[2]);
        let data = obj.data();
        let mut loss = 0.0;
        for &(a, row, col, positive) in &self.samples {
            let z = data[(a * h + row) * w + col];
            let t = f64::from(positive);
            loss += z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln();
        }
        Ok((Tensor::scalar(loss / self.samples.len().max(1) as f64), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let obj = inputs[0];
        let (h, w) = (obj.shape()[1], obj.shape()[2]);
        let data = obj.data();
        let g = grad_out.item() / self.samples.len().max(1) as f64;
        let mut grad = Tensor::zeros(obj.shape());
        for &(a, row, col, positive) in &self.samples {
            let idx = (a * h + row) * w + col;
            grad.data_mut()[idx] += g * (sigmoid_scalar(data[idx]) - f64::from(positive));
        }
        Ok(vec![Some(grad)])
    }
}

/// Mean smooth-L1 over positive anchors; input is the [4A,h,w] delta map.
struct RpnBoxLoss {
    /// (anchor channel, row, col, encoded target)
    positives: Vec<(usize, usize, usize, [f64; 4])>,
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

impl GraphOp for RpnBoxLoss {
    fn name(&self) -> &'static str {
        "rpn_box_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Option<Box<dyn Any>>)> {
        let deltas = inputs[0];
        let (h, w) = (deltas.shape()[1], deltas.shape()[2]);
        let data = deltas.data();
        let mut loss = 0.0;
        for &(a, row, col, target) in &self.positives {
            for j in 0..4 {
                loss += smooth_l1(data[((4 * a + j) * h + row) * w + col] - target[j]);
            }
        }
        Ok((Tensor::scalar(loss / self.positives.len().max(1) as f64), None))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: Option<&dyn Any>,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let deltas = inputs[0];
        let (h, w) = (deltas.shape()[1], deltas.shape()[2]);
        let data = deltas.data();
        let g = grad_out.item() / self.positives.len().max(1) as f64;
        let mut grad = Tensor::zeros(deltas.shape());
        for &(a, row, col, target) in &self.positives {
            for j in 0..4 {
                let idx = ((4 * a + j) * h + row) * w + col;
                let d = data[idx] - target[j];
                grad.data_mut()[idx] += g * if d.abs() < 1.0 { d } else { d.signum() };
            }
        }
        Ok(vec![Some(grad)])
    }
}

/// Anchor labels for RPN training: positive above `rpn_pos_iou` or the
/// best anchor of each ground truth; negative below `rpn_neg_iou`;
/// everything else ignored. Samples up to half the batch as positives,
/// fills the rest with negatives.
fn sample_rpn_anchors(
    anchors: &[BBox],
    gts: &[(BBox, usize)],
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> (Vec<(usize, bool)>, Vec<(usize, [f64; 4])>) {
    let mut max_iou = vec![0.0f64; anchors.len()];
    let mut best_gt = vec![0usize; anchors.len()];
    let mut gt_best_anchor = vec![(0usize, 0.0f64); gts.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        for (gi, (gbox, _)) in gts.iter().enumerate() {
            let v = iou(anchor, gbox);
            if v > max_iou[ai] {
                max_iou[ai] = v;
                best_gt[ai] = gi;
            }
            if v > gt_best_anchor[gi].1 {
                gt_best_anchor[gi] = (ai, v);
            }
        }
    }
    let mut positive = vec![false; anchors.len()];
    for (ai, &m) in max_iou.iter().enumerate() {
        if m >= config.rpn_pos_iou {
            positive[ai] = true;
        }
    }
    for &(ai, v) in &gt_best_anchor {
        if v > 0.0 {
            positive[ai] = true;
        }
    }
    let pos_pool: Vec<usize> = (0..anchors.len()).filter(|&i| positive[i]).collect();
    let neg_pool: Vec<usize> = (0..anchors.len())
        .filter(|&i| !positive[i] && max_iou[i] < config.rpn_neg_iou)
        .collect();

    let half = config.rpn_batch / 2;
    let take_pos = half.min(pos_pool.len());
    let chosen_pos: Vec<usize> =
        rng.choose(pos_pool.len(), take_pos).into_iter().map(|k| pos_pool[k]).collect();
    let take_neg = (config.rpn_batch - take_pos).min(neg_pool.len());
    let chosen_neg: Vec<usize> =
        rng.choose(neg_pool.len(), take_neg).into_iter().map(|k| neg_pool[k]).collect();

    let mut samples: Vec<(usize, bool)> = Vec::with_capacity(take_pos + take_neg);
    let mut box_targets: Vec<(usize, [f64; 4])> = Vec::new();
    for ai in chosen_pos {
        samples.push((ai, true));
        let (gbox, _) = gts[best_gt[ai]];
        if let Ok(target) = encode_box(&gbox, &anchors[ai]) {
            box_targets.push((ai, target));
        }
    }
    for ai in chosen_neg {
        samples.push((ai, false));
    }
    (samples, box_targets)
}

// ---------------------------------------------------------------------
// the training loop

struct StepOutcome {
    row: TrainLogRow,
}

fn train_step(
    model: &mut Model,
    scene: &Scene,
    iteration: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    let config = model.config.clone();
    let gts: Vec<(BBox, usize)> =
        scene.annotations.iter().map(|a| (a.bbox, a.class)).collect();

    let mut g = Graph::new();
    let image = g.input(scene.image.clone());
    let feature = model.run_backbone(&mut g, image)?;

    // proposals plus, in RPN mode, the proposal-head losses
    let mut rpn_terms: Vec<NodeId> = Vec::new();
    let mut rpn_obj_value = 0.0;
    let mut rpn_box_value = 0.0;
    let proposals: Vec<BBox> = match config.proposal_source {
        ProposalKind::Oracle => oracle_proposals(&scene.annotations, &config, rng),
        ProposalKind::Rpn => {
            let outputs = model.run_rpn(&mut g, feature)?;
            let (samples, box_targets) =
                sample_rpn_anchors(&outputs.anchors.boxes, &gts, &config, rng);
            let set = &outputs.anchors;
            let to_pos = |ai: usize| super::model::anchor_position(set, ai);
            if !samples.is_empty() {
                let obj_loss = g.apply(
                    RpnObjectnessLoss {
                        samples: samples
                            .iter()
                            .map(|&(ai, p)| {
                                let (row, col, a) = to_pos(ai);
                                (a, row, col, p)
                            })
                            .collect(),
                    },
                    &[outputs.objectness],
                )?;
                rpn_obj_value = g.value(obj_loss).item();
                rpn_terms.push(obj_loss);
            }
            if !box_targets.is_empty() {
                let box_loss_node = g.apply(
                    RpnBoxLoss {
                        positives: box_targets
                            .iter()
                            .map(|&(ai, t)| {
                                let (row, col, a) = to_pos(ai);
                                (a, row, col, t)
                            })
                            .collect(),
                    },
                    &[outputs.deltas],
                )?;
                rpn_box_value = g.value(box_loss_node).item();
                rpn_terms.push(box_loss_node);
            }
            rpn_proposals(g.value(outputs.objectness), g.value(outputs.deltas), &outputs, &config)?
                .into_iter()
                .map(|(b, _)| b)
                .collect()
        }
    };

    let sampler = SamplerConfig {
        rois_per_image: config.rois_per_image,
        pos_fraction: config.pos_fraction,
        pos_iou: 0.5,
    };
    let samples = match_and_sample(&proposals, &gts, &sampler, rng)?;
    let positives = samples.iter().filter(|s| s.is_positive()).count();

    let mut cls_terms = Vec::new();
    let mut box_terms = Vec::new();
    let mut mask_terms = Vec::new();
    let mut kp_terms = Vec::new();
    for sample in &samples {
        let rf = model.extract_roi(&mut g, feature, &sample.roi, config.box_resolution)?;
        let (cls_logits, deltas) = model.box_head.forward(&mut g, &model.params, rf)?;
        cls_terms.push(cls_loss(&mut g, cls_logits, sample.label)?);
        if !sample.is_positive() {
            continue;
        }
        let target = sample.regression_target.expect("positive samples carry targets");
        box_terms.push(box_loss(&mut g, deltas, target, sample.label)?);
        let gt = &scene.annotations[sample.matched_gt.expect("positive samples are matched")];
        if let Some(branch) = &model.mask_branch {
            let m = config.heads.mask_resolution;
            let mrf = model.extract_roi(&mut g, feature, &sample.roi, m / 2)?;
            let logits = branch.forward(&mut g, &model.params, mrf)?;
            let mask_target = make_mask_target(&sample.roi, &gt.mask, m, sample.label)?;
            mask_terms.push(mask_loss(&mut g, &config.heads, logits, &mask_target)?);
        }
        if let Some(branch) = &model.keypoint_branch {
            let r = config.heads.keypoint_resolution;
            let krf = model.extract_roi(&mut g, feature, &sample.roi, r / 2)?;
            let logits = branch.forward(&mut g, &model.params, krf)?;
            let kp_target = make_keypoint_target(&sample.roi, &gt.keypoints, r)?;
            kp_terms.push(keypoint_loss(&mut g, logits, &kp_target)?);
        }
    }

    let cls_mean = mean_loss(&mut g, &cls_terms)?;
    let box_mean = mean_loss(&mut g, &box_terms)?;
    let mask_mean = mean_loss(&mut g, &mask_terms)?;
    let kp_mean = mean_loss(&mut g, &kp_terms)?;
    let mut components = vec![cls_mean, box_mean, mask_mean, kp_mean];
    components.extend(rpn_terms.iter());
    let total = total_loss(&mut g, &components)?;

    let row = TrainLogRow {
        iteration,
        lr,
        total: g.value(total).item(),
        cls: g.value(cls_mean).item(),
        bbox: g.value(box_mean).item(),
        mask: g.value(mask_mean).item(),
        keypoint: g.value(kp_mean).item(),
        rpn_obj: rpn_obj_value,
        rpn_box: rpn_box_value,
        positives,
    };

    if !row.total.is_finite() || row.total > config.divergence_limit {
        return Err(Error::Diverged {
            iteration,
            detail: format!(
                "total={} cls={} box={} mask={} kp={} rpn_obj={} rpn_box={}",
                row.total, row.cls, row.bbox, row.mask, row.keypoint, row.rpn_obj, row.rpn_box
            ),
        });
    }

    let grads = g.backward(total)?;
    model.params.zero_grads();
    model.params.accumulate(&grads)?;
    model.params.sgd_step(&SgdConfig {
        lr,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    })?;
    Ok(StepOutcome { row })
}

fn schedule_lr(config: &ExperimentConfig, step: usize) -> f64 {
    if step >= config.lr_drop_at {
        config.lr * config.lr_drop_factor
    } else {
        config.lr
    }
}

fn write_divergence_dump(
    out_dir: Option<&Path>,
    tag: &str,
    model: &Model,
    log: &[TrainLogRow],
    err: &Error,
) -> Option<PathBuf> {
    let dir = out_dir?;
    let mut text = String::new();
    let _ = writeln!(text, "divergence dump: {err}");
    let _ = writeln!(text, "parameter norms:");
    for p in model.params.iter() {
        let norm: f64 = p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = writeln!(text, "  {} {:?} |v|={norm}", p.name, p.value.shape());
    }
    let _ = writeln!(text, "last log rows:");
    for row in log.iter().rev().take(10) {
        let _ = writeln!(text, "  {}", row.to_line());
    }
    let path = dir.join(format!("{tag}-dump.txt"));
    std::fs::write(&path, text).ok()?;
    Some(path)
}

fn run_loop(
    mut model: Model,
    dataset: &Dataset,
    mut rng: Rng,
    start_step: usize,
    out_dir: Option<&Path>,
    tag: &str,
) -> Result<TrainArtifacts> {
    let config = model.config.clone();
    let mut log: Vec<TrainLogRow> = Vec::with_capacity(config.iterations - start_step);
    for step in start_step..config.iterations {
        let lr = schedule_lr(&config, step);
        for _ in 0..config.images_per_step {
            let idx = rng.below(dataset.len());
            let scene = dataset.scene(idx)?;
            match train_step(&mut model, &scene, step, lr, &mut rng) {
                Ok(outcome) => log.push(outcome.row),
                Err(err) => {
                    let dump = write_divergence_dump(out_dir, tag, &model, &log, &err);
                    if let Some(path) = dump {
                        return Err(Error::Diverged {
                            iteration: step,
                            detail: format!("{err}; dump written to {}", path.display()),
                        });
                    }
                    return Err(err);
                }
            }
        }
        let completed = step + 1;
        if config.checkpoint_every > 0
            && completed % config.checkpoint_every == 0
            && completed < config.iterations
        {
            if let Some(dir) = out_dir {
                let path = dir.join(format!("{tag}-iter{completed}.ckpt"));
                save_checkpoint(&path, &model, completed, rng.state())?;
            }
        }
    }

    let mut final_checkpoint = None;
    let mut log_path = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let ckpt = dir.join(format!("{tag}-final.ckpt"));
        save_checkpoint(&ckpt, &model, config.iterations, rng.state())?;
        final_checkpoint = Some(ckpt);
        let lp = dir.join(format!("{tag}.log"));
        let mut text = String::with_capacity(log.len() * 80);
        text.push_str(TrainLogRow::header());
        text.push('\n');
        for row in &log {
            text.push_str(&row.to_line());
            text.push('\n');
        }
        std::fs::write(&lp, text)?;
        log_path = Some(lp);
    }
    Ok(TrainArtifacts { model, log, final_checkpoint, log_path })
}

/// Output file tag for a (config, seed) pair.
pub fn run_tag(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}-s{seed}", config.hash_hex())
}

/// Train from scratch. With an output directory, writes
/// `<hash>-s<seed>.log`, periodic checkpoints, and a final checkpoint.
pub fn train(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainArtifacts> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let model = Model::new(config, seed)?;
    let rng = Rng::stream(seed, TRAIN_STREAM);
    run_loop(model, dataset, rng, 0, out_dir, &run_tag(config, seed))
}

/// Continue a checkpointed run to `config.iterations`; the result's final
/// weights match an uninterrupted run bit for bit.
pub fn resume_train(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    checkpoint: &Path,
    out_dir: Option<&Path>,
) -> Result<TrainArtifacts> {
    config.validate()?;
    let mut model = Model::new(config, seed)?;
    let state: CheckpointState = load_checkpoint(checkpoint)?;
    if state.config_hash != config.hash_hex() {
        return Err(Error::Checkpoint(format!(
            "config hash {} does not match checkpoint's {}",
            config.hash_hex(),
            state.config_hash
        )));
    }
    let start = state.iteration;
    let rng = Rng::restore(state.rng_state);
    state.apply_to(&mut model)?;
    run_loop(model, dataset, rng, start, out_dir, &run_tag(config, seed))
}
