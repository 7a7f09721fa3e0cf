//! The two-stage model: a tiny strided backbone over the whole image,
//! per-RoI heads, and an optional region-proposal head.

use crate::boxes::{generate_anchors, AnchorSet, BBox};
use crate::config::{ExperimentConfig, ProposalKind};
use crate::error::{Error, Result};
use crate::heads::{build_mask_branch, BoxHead, KeypointBranch, MaskBranch};
use crate::rng::Rng;
use crate::roi::{RoiExtract, RoiOpSpec};
use crate::tensor::{scaled_uniform, Graph, NodeId, ParamId, ParamSet, Tensor, RELU_GAIN};

/// One backbone stage: a 2x2-stride-2 downsampling conv followed by a
/// 3x3 mixing conv, ReLU after each.
struct Stage {
    down: (ParamId, ParamId),
    conv: (ParamId, ParamId),
}

pub struct RpnHead {
    conv: (ParamId, ParamId),
    objectness: (ParamId, ParamId),
    deltas: (ParamId, ParamId),
}

/// Outputs of the proposal head for one image.
pub struct RpnOutputs {
    /// [A, h, w] objectness logits.
    pub objectness: NodeId,
    /// [4A, h, w] box deltas.
    pub deltas: NodeId,
    pub anchors: AnchorSet,
}

pub struct Model {
    pub config: ExperimentConfig,
    pub params: ParamSet,
    pub seed: u64,
    stages: Vec<Stage>,
    rpn: Option<RpnHead>,
    pub box_head: BoxHead,
    pub mask_branch: Option<MaskBranch>,
    pub keypoint_branch: Option<KeypointBranch>,
}

impl Model {
    /// Registers all parameters in a fixed order; `seed` drives the
    /// weight init stream.
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = Rng::stream(seed, 0xB00F);

        let mut stages = Vec::new();
        let mut c_in = 3usize;
        for (i, &width) in config.backbone_widths.iter().enumerate() {
            let down = (
                params.register(
                    &format!("backbone.s{i}.down.weight"),
                    scaled_uniform(&[width, c_in, 2, 2], c_in * 4, width * 4, RELU_GAIN, &mut rng),
                )?,
                params.register(&format!("backbone.s{i}.down.bias"), Tensor::zeros(&[width]))?,
            );
            let conv = (
                params.register(
                    &format!("backbone.s{i}.conv.weight"),
                    scaled_uniform(&[width, width, 3, 3], width * 9, width * 9, RELU_GAIN, &mut rng),
                )?,
                params.register(&format!("backbone.s{i}.conv.bias"), Tensor::zeros(&[width]))?,
            );
            stages.push(Stage { down, conv });
            c_in = width;
        }
        let feature_channels = c_in;

        let rpn = if config.proposal_source == ProposalKind::Rpn {
            let a = config.anchor_scales.len() * config.anchor_ratios.len();
            Some(RpnHead {
                conv: (
                    params.register(
                        "rpn.conv.weight",
                        scaled_uniform(
                            &[feature_channels, feature_channels, 3, 3],
                            feature_channels * 9,
                            feature_channels * 9,
                            RELU_GAIN,
                            &mut rng,
                        ),
                    )?,
                    params.register("rpn.conv.bias", Tensor::zeros(&[feature_channels]))?,
                ),
                objectness: (
                    params.register(
                        "rpn.obj.weight",
                        scaled_uniform(&[a, feature_channels, 1, 1], feature_channels, a, 1.0, &mut rng),
                    )?,
                    params.register("rpn.obj.bias", Tensor::zeros(&[a]))?,
                ),
                deltas: (
                    params.register(
                        "rpn.delta.weight",
                        scaled_uniform(
                            &[4 * a, feature_channels, 1, 1],
                            feature_channels,
                            4 * a,
                            1.0,
                            &mut rng,
                        ),
                    )?,
                    params.register("rpn.delta.bias", Tensor::zeros(&[4 * a]))?,
                ),
            })
        } else {
            None
        };

        let box_head = BoxHead::new(
            &mut params,
            "box",
            &config.heads,
            feature_channels,
            config.box_resolution,
            &mut rng,
        )?;
        let mask_branch = if config.mask_enabled {
            Some(build_mask_branch(&mut params, "mask", &config.heads, feature_channels, &mut rng)?)
        } else {
            None
        };
        let keypoint_branch = if config.heads.keypoint_count > 0 {
            Some(KeypointBranch::new(&mut params, "kp", &config.heads, feature_channels, &mut rng)?)
        } else {
            None
        };

        Ok(Model {
            config: config.clone(),
            params,
            seed,
            stages,
            rpn,
            box_head,
            mask_branch,
            keypoint_branch,
        })
    }

    pub fn feature_channels(&self) -> usize {
        *self.config.backbone_widths.last().expect("validated nonempty")
    }

    pub fn has_rpn(&self) -> bool {
        self.rpn.is_some()
    }

    /// Whole-image features at the configured stride.
    pub fn run_backbone(&self, g: &mut Graph, image: NodeId) -> Result<NodeId> {
        let shape = g.value(image).shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape(format!("backbone: image must be [3,H,W], got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        let stride = self.config.backbone_stride;
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::shape(format!(
                "backbone: image {h}x{w} not divisible by stride {stride}"
            )));
        }
        let mut x = image;
        for stage in &self.stages {
            let dw = g.param(&self.params, stage.down.0);
            let db = g.param(&self.params, stage.down.1);
            x = g.downsample2d(x, dw, Some(db))?;
            x = g.relu(x);
            let cw = g.param(&self.params, stage.conv.0);
            let cb = g.param(&self.params, stage.conv.1);
            x = g.conv2d(x, cw, Some(cb), 1, 1)?;
            x = g.relu(x);
        }
        Ok(x)
    }

    /// Proposal-head forward over the feature map, with anchors for its
    /// grid. Only valid in RPN mode.
    pub fn run_rpn(&self, g: &mut Graph, feature: NodeId) -> Result<RpnOutputs> {
        let rpn = self
            .rpn
            .as_ref()
            .ok_or_else(|| Error::invalid("run_rpn: model built without an RPN".to_string()))?;
        let (grid_h, grid_w) = {
            let s = g.value(feature).shape();
            (s[1], s[2])
        };
        let cw = g.param(&self.params, rpn.conv.0);
        let cb = g.param(&self.params, rpn.conv.1);
        let shared = g.conv2d(feature, cw, Some(cb), 1, 1)?;
        let shared = g.relu(shared);
        let ow = g.param(&self.params, rpn.objectness.0);
        let ob = g.param(&self.params, rpn.objectness.1);
        let objectness = g.conv2d(shared, ow, Some(ob), 1, 0)?;
        let dw = g.param(&self.params, rpn.deltas.0);
        let db = g.param(&self.params, rpn.deltas.1);
        let deltas = g.conv2d(shared, dw, Some(db), 1, 0)?;
        let anchors = generate_anchors(
            grid_h,
            grid_w,
            self.config.backbone_stride as f64,
            &self.config.anchor_scales,
            &self.config.anchor_ratios,
        )?;
        Ok(RpnOutputs { objectness, deltas, anchors })
    }

    /// RoI spec for a head needing `output` x `output` features.
    pub fn roi_spec(&self, output: usize) -> RoiOpSpec {
        RoiOpSpec::new(
            self.config.roi_op.kind(),
            output,
            output,
            self.config.sampling_points,
            self.config.roi_op.aggregation(),
            self.config.backbone_stride as f64,
        )
        .expect("validated config")
    }

    /// Extract features for one RoI at the given output resolution.
    pub fn extract_roi(&self, g: &mut Graph, feature: NodeId, roi: &BBox, output: usize) -> Result<NodeId> {
        g.apply(RoiExtract { roi: *roi, spec: self.roi_spec(output) }, &[feature])
    }
}

/// Flat index of anchor (cell_row, cell_col, a) in [`AnchorSet`] order.
pub fn anchor_index(set: &AnchorSet, row: usize, col: usize, a: usize) -> usize {
    (row * set.grid_w + col) * set.per_cell() + a
}

/// Inverse of [`anchor_index`].
pub fn anchor_position(set: &AnchorSet, index: usize) -> (usize, usize, usize) {
    let per_cell = set.per_cell();
    let cell = index / per_cell;
    (cell / set.grid_w, cell % set.grid_w, index % per_cell)
}
