//! Inference: proposals, box prediction, NMS, then the mask (and
//! keypoint) pass on the surviving boxes only, with freshly extracted
//! RoI features rather than cached proposal features.

use crate::boxes::{decode_box, BBox};
use crate::config::ProposalKind;
use crate::error::Result;
use crate::postproc::{
    mask_probabilities, paste_mask, select_detections, select_mask, DetectionResult, InstanceMask,
};
use crate::rng::Rng;
use crate::synth::Scene;
use crate::tensor::{ops, Graph};

use super::model::Model;
use super::proposals::{oracle_proposals, rpn_proposals};

/// Stream tag separating inference-time oracle jitter from training.
const ORACLE_EVAL_STREAM: u64 = 0x0EAC;

/// Detect, select, and segment one image. `image_index` seeds the
/// deterministic oracle-proposal jitter; RPN mode ignores it.
pub fn infer(model: &Model, scene: &Scene, image_index: u64) -> Result<Vec<(DetectionResult, InstanceMask)>> {
    let config = &model.config;
    let (img_h, img_w) = (config.scene.image_h, config.scene.image_w);

    let mut g = Graph::new();
    let image = g.input(scene.image.clone());
    let feature = model.run_backbone(&mut g, image)?;

    let proposals: Vec<BBox> = match config.proposal_source {
        ProposalKind::Oracle => {
            let mut rng = Rng::stream(config.scene.seed ^ ORACLE_EVAL_STREAM, image_index);
            oracle_proposals(&scene.annotations, config, &mut rng)
        }
        ProposalKind::Rpn => {
            let outputs = model.run_rpn(&mut g, feature)?;
            rpn_proposals(g.value(outputs.objectness), g.value(outputs.deltas), &outputs, config)?
                .into_iter()
                .map(|(b, _)| b)
                .collect()
        }
    };

    // box branch on every proposal
    let mut scored: Vec<(BBox, usize, f64)> = Vec::new();
    for proposal in &proposals {
        let rf = model.extract_roi(&mut g, feature, proposal, config.box_resolution)?;
        let (cls_node, delta_node) = model.box_head.forward(&mut g, &model.params, rf)?;
        let probs = ops::softmax_forward(g.value(cls_node), 0)?;
        let deltas = g.value(delta_node);
        for class in 1..=config.heads.num_classes {
            let score = probs.data()[class];
            let row = class - 1;
            let delta = [
                deltas.data()[row * 4],
                deltas.data()[row * 4 + 1],
                deltas.data()[row * 4 + 2],
                deltas.data()[row * 4 + 3],
            ];
            let decoded = decode_box(&delta, proposal)?.clip(img_w as f64, img_h as f64);
            if decoded.width() > 1e-6 && decoded.height() > 1e-6 {
                scored.push((decoded, class, score));
            }
        }
    }

    let mut detections =
        select_detections(&scored, config.nms_threshold, config.score_threshold, config.top_k)?;

    // mask and keypoint passes on the survivors' own boxes
    let mut out = Vec::with_capacity(detections.len());
    for (index, det) in detections.iter_mut().enumerate() {
        let mut instance_mask = InstanceMask {
            mask: crate::mask::BinaryMask::zeros(img_h, img_w),
            detection: index,
        };
        if let Some(branch) = &model.mask_branch {
            let m = config.heads.mask_resolution;
            let rf = model.extract_roi(&mut g, feature, &det.bbox, m / 2)?;
            let logits_node = branch.forward(&mut g, &model.params, rf)?;
            let logits = g.value(logits_node);
            det.mask_logits = Some(select_mask(logits, &config.heads, det.class)?);
            let probs = mask_probabilities(logits, &config.heads, det.class)?;
            instance_mask =
                paste_mask(&probs, &det.bbox, img_h, img_w, config.mask_threshold, index)?;
        }
        if let Some(branch) = &model.keypoint_branch {
            let r = config.heads.keypoint_resolution;
            let rf = model.extract_roi(&mut g, feature, &det.bbox, r / 2)?;
            let heatmaps = branch.forward(&mut g, &model.params, rf)?;
            det.keypoint_heatmaps = Some(g.value(heatmaps).clone());
        }
        out.push((det.clone(), instance_mask));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::synth::generate_scene;

    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.scene.image_h = 32;
        config.scene.image_w = 32;
        config.scene.min_size = 10.0;
        config.scene.max_size = 16.0;
        config.backbone_widths = vec![4, 8];
        config.backbone_stride = 4;
        config.heads.channel_width = 8;
        config.heads.mlp_hidden = 16;
        config.heads.mask_resolution = 8;
        config.box_resolution = 4;
        config.iterations = 10;
        config.lr_drop_at = 8;
        config
    }

    #[test]
    fn untrained_model_produces_valid_detections() {
        let config = tiny_config();
        let model = Model::new(&config, 8).unwrap();
        let scene = generate_scene(&config.scene, 0).unwrap();
        let results = infer(&model, &scene, 0).unwrap();
        assert!(results.len() <= config.top_k);
        for (det, mask) in &results {
            assert!(det.class >= 1 && det.class <= 3);
            assert!(det.score >= config.score_threshold && det.score <= 1.0);
            assert!(det.bbox.x1 >= 0.0 && det.bbox.x2 <= 32.0);
            assert!(det.mask_logits.is_some());
            assert_eq!(mask.mask.height, 32);
            // pasted pixels stay inside the detection's box
            for r in 0..32 {
                for c in 0..32 {
                    if mask.mask.get(r, c) == 1 {
                        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                        assert!(x >= det.bbox.x1 - 1.0 && x <= det.bbox.x2 + 1.0);
                        assert!(y >= det.bbox.y1 - 1.0 && y <= det.bbox.y2 + 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn inference_is_deterministic_per_image_index() {
        let config = tiny_config();
        let model = Model::new(&config, 8).unwrap();
        let scene = generate_scene(&config.scene, 3).unwrap();
        let a = infer(&model, &scene, 3).unwrap();
        let b = infer(&model, &scene, 3).unwrap();
        assert_eq!(a.len(), b.len());
        for ((da, ma), (db, mb)) in a.iter().zip(&b) {
            assert_eq!(da.score.to_bits(), db.score.to_bits());
            assert_eq!(ma.mask, mb.mask);
        }
    }

    #[test]
    fn top_k_is_honored() {
        let mut config = tiny_config();
        config.top_k = 2;
        config.score_threshold = 0.0;
        let model = Model::new(&config, 8).unwrap();
        let scene = generate_scene(&config.scene, 1).unwrap();
        let results = infer(&model, &scene, 1).unwrap();
        assert!(results.len() <= 2);
    }
}
