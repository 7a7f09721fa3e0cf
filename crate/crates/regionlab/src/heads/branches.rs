//! Head subgraphs: FCN and MLP mask branches, the box/classification
//! head, and the keypoint branch. Each registers its parameters once and
//! re-applies them to any number of RoIs per graph.

use super::HeadConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{scaled_uniform, Graph, NodeId, ParamId, ParamSet, Tensor, RELU_GAIN};

fn conv_param(
    params: &mut ParamSet,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let w = params.register(
        &format!("{name}.weight"),
        scaled_uniform(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, gain, rng),
    )?;
    let b = params.register(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
    Ok((w, b))
}

fn deconv_param(
    params: &mut ParamSet,
    name: &str,
    c_in: usize,
    c_out: usize,
    gain: f64,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let w = params.register(
        &format!("{name}.weight"),
        scaled_uniform(&[c_in, c_out, 2, 2], c_in * 4, c_out * 4, gain, rng),
    )?;
    let b = params.register(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
    Ok((w, b))
}

fn linear_param(
    params: &mut ParamSet,
    name: &str,
    d: usize,
    m: usize,
    gain: f64,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let w =
        params.register(&format!("{name}.weight"), scaled_uniform(&[d, m], d, m, gain, rng))?;
    let b = params.register(&format!("{name}.bias"), Tensor::zeros(&[m]))?;
    Ok((w, b))
}

fn check_roi_input(x: &Tensor, channels: usize, spatial: usize, what: &str) -> Result<()> {
    if x.shape() != [channels, spatial, spatial] {
        return Err(Error::shape(format!(
            "{what}: RoI feature must be [{channels},{spatial},{spatial}], got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Four 3x3 convs, a 2x2-stride-2 deconv (doubling m/2 to m), ReLU
/// between layers, and a 1x1 output conv to the variant's channel count.
pub struct FcnMaskBranch {
    convs: Vec<(ParamId, ParamId)>,
    deconv: (ParamId, ParamId),
    out: (ParamId, ParamId),
    in_channels: usize,
    mask_resolution: usize,
}

impl FcnMaskBranch {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &HeadConfig,
        in_channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = config.channel_width;
        let mut convs = Vec::with_capacity(4);
        for i in 0..4 {
            let c_in = if i == 0 { in_channels } else { w };
            convs.push(conv_param(params, &format!("{prefix}.conv{i}"), w, c_in, 3, RELU_GAIN, rng)?);
        }
        let deconv = deconv_param(params, &format!("{prefix}.deconv"), w, w, RELU_GAIN, rng)?;
        let out =
            conv_param(params, &format!("{prefix}.out"), config.mask_channels(), w, 1, 1.0, rng)?;
        Ok(FcnMaskBranch {
            convs,
            deconv,
            out,
            in_channels,
            mask_resolution: config.mask_resolution,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        check_roi_input(g.value(x), self.in_channels, self.mask_resolution / 2, "mask branch")?;
        let mut h = x;
        for (w, b) in &self.convs {
            let wn = g.param(params, *w);
            let bn = g.param(params, *b);
            h = g.conv2d(h, wn, Some(bn), 1, 1)?;
            h = g.relu(h);
        }
        let (dw, db) = self.deconv;
        let dwn = g.param(params, dw);
        let dbn = g.param(params, db);
        h = g.deconv2d(h, dwn, Some(dbn))?;
        h = g.relu(h);
        let (ow, ob) = self.out;
        let own = g.param(params, ow);
        let obn = g.param(params, ob);
        g.conv2d(h, own, Some(obn), 1, 0)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (w, b) in &self.convs {
            ids.push(*w);
            ids.push(*b);
        }
        ids.extend([self.deconv.0, self.deconv.1, self.out.0, self.out.1]);
        ids
    }
}

/// Flatten, two hidden affine layers with ReLU, and a final affine to
/// K * m^2 reshaped to [K, m, m].
pub struct MlpMaskBranch {
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    fc_out: (ParamId, ParamId),
    in_channels: usize,
    out_channels: usize,
    mask_resolution: usize,
}

impl MlpMaskBranch {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &HeadConfig,
        in_channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let half = config.mask_resolution / 2;
        let d_in = in_channels * half * half;
        let hidden = config.mlp_hidden;
        let out_channels = config.mask_channels();
        let d_out = out_channels * config.mask_resolution * config.mask_resolution;
        Ok(MlpMaskBranch {
            fc1: linear_param(params, &format!("{prefix}.fc1"), d_in, hidden, RELU_GAIN, rng)?,
            fc2: linear_param(params, &format!("{prefix}.fc2"), hidden, hidden, RELU_GAIN, rng)?,
            fc_out: linear_param(params, &format!("{prefix}.fc_out"), hidden, d_out, 1.0, rng)?,
            in_channels,
            out_channels,
            mask_resolution: config.mask_resolution,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        let half = self.mask_resolution / 2;
        check_roi_input(g.value(x), self.in_channels, half, "mlp mask branch")?;
        let d_in = self.in_channels * half * half;
        let mut h = g.reshape(x, &[1, d_in])?;
        for (w, b) in [self.fc1, self.fc2] {
            let wn = g.param(params, w);
            let bn = g.param(params, b);
            h = g.linear(h, wn, bn)?;
            h = g.relu(h);
        }
        let (ow, ob) = self.fc_out;
        let own = g.param(params, ow);
        let obn = g.param(params, ob);
        let flat = g.linear(h, own, obn)?;
        g.reshape(flat, &[self.out_channels, self.mask_resolution, self.mask_resolution])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (w, b) in [self.fc1, self.fc2, self.fc_out] {
            ids.push(w);
            ids.push(b);
        }
        ids
    }
}

pub enum MaskBranch {
    Fcn(FcnMaskBranch),
    Mlp(MlpMaskBranch),
}

/// Instantiate the branch selected by `config.branch_kind`; its input is
/// an RoI feature of `in_channels` at spatial size m/2 and its output is
/// [mask_channels, m, m] logits.
pub fn build_mask_branch(
    params: &mut ParamSet,
    prefix: &str,
    config: &HeadConfig,
    in_channels: usize,
    rng: &mut Rng,
) -> Result<MaskBranch> {
    config.validate()?;
    Ok(match config.branch_kind {
        super::BranchKind::Fcn => {
            MaskBranch::Fcn(FcnMaskBranch::new(params, prefix, config, in_channels, rng)?)
        }
        super::BranchKind::Mlp => {
            MaskBranch::Mlp(MlpMaskBranch::new(params, prefix, config, in_channels, rng)?)
        }
    })
}

impl MaskBranch {
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        match self {
            MaskBranch::Fcn(b) => b.forward(g, params, x),
            MaskBranch::Mlp(b) => b.forward(g, params, x),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            MaskBranch::Fcn(b) => b.param_ids(),
            MaskBranch::Mlp(b) => b.param_ids(),
        }
    }

    pub fn param_count(&self, params: &ParamSet) -> usize {
        params.count_in(&self.param_ids())
    }
}

/// Classification + box regression head: flatten the RoI feature, one
/// hidden affine layer with ReLU, then parallel linear outputs for K+1
/// class logits and K per-class box deltas.
pub struct BoxHead {
    fc: (ParamId, ParamId),
    cls: (ParamId, ParamId),
    bbox: (ParamId, ParamId),
    in_channels: usize,
    resolution: usize,
    num_classes: usize,
}

impl BoxHead {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &HeadConfig,
        in_channels: usize,
        resolution: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d_in = in_channels * resolution * resolution;
        let hidden = config.mlp_hidden;
        let k = config.num_classes;
        Ok(BoxHead {
            fc: linear_param(params, &format!("{prefix}.fc"), d_in, hidden, RELU_GAIN, rng)?,
            cls: linear_param(params, &format!("{prefix}.cls"), hidden, k + 1, 1.0, rng)?,
            bbox: linear_param(params, &format!("{prefix}.bbox"), hidden, k * 4, 1.0, rng)?,
            in_channels,
            resolution,
            num_classes: k,
        })
    }

    /// Returns (class logits [K+1], box deltas [K,4]).
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        check_roi_input(g.value(x), self.in_channels, self.resolution, "box head")?;
        let d_in = self.in_channels * self.resolution * self.resolution;
        let flat = g.reshape(x, &[1, d_in])?;
        let (fw, fb) = self.fc;
        let fwn = g.param(params, fw);
        let fbn = g.param(params, fb);
        let hidden = g.linear(flat, fwn, fbn)?;
        let hidden = g.relu(hidden);

        let (cw, cb) = self.cls;
        let cwn = g.param(params, cw);
        let cbn = g.param(params, cb);
        let cls = g.linear(hidden, cwn, cbn)?;
        let cls = g.reshape(cls, &[self.num_classes + 1])?;

        let (bw, bb) = self.bbox;
        let bwn = g.param(params, bw);
        let bbn = g.param(params, bb);
        let bbox = g.linear(hidden, bwn, bbn)?;
        let bbox = g.reshape(bbox, &[self.num_classes, 4])?;
        Ok((cls, bbox))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (w, b) in [self.fc, self.cls, self.bbox] {
            ids.push(w);
            ids.push(b);
        }
        ids
    }
}

/// Keypoint branch: a short conv stack on a (kp_res/2) RoI feature, a
/// deconv doubling it to kp_res, and a 1x1 conv to one heatmap per
/// keypoint type.
pub struct KeypointBranch {
    convs: Vec<(ParamId, ParamId)>,
    deconv: (ParamId, ParamId),
    out: (ParamId, ParamId),
    in_channels: usize,
    resolution: usize,
}

impl KeypointBranch {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &HeadConfig,
        in_channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.keypoint_count == 0 {
            return Err(Error::invalid("keypoint branch: keypoint_count is 0".to_string()));
        }
        let w = config.channel_width;
        let mut convs = Vec::with_capacity(2);
        for i in 0..2 {
            let c_in = if i == 0 { in_channels } else { w };
            convs.push(conv_param(params, &format!("{prefix}.conv{i}"), w, c_in, 3, RELU_GAIN, rng)?);
        }
        let deconv = deconv_param(params, &format!("{prefix}.deconv"), w, w, RELU_GAIN, rng)?;
        let out =
            conv_param(params, &format!("{prefix}.out"), config.keypoint_count, w, 1, 1.0, rng)?;
        Ok(KeypointBranch { convs, deconv, out, in_channels, resolution: config.keypoint_resolution })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        check_roi_input(g.value(x), self.in_channels, self.resolution / 2, "keypoint branch")?;
        let mut h = x;
        for (w, b) in &self.convs {
            let wn = g.param(params, *w);
            let bn = g.param(params, *b);
            h = g.conv2d(h, wn, Some(bn), 1, 1)?;
            h = g.relu(h);
        }
        let (dw, db) = self.deconv;
        let dwn = g.param(params, dw);
        let dbn = g.param(params, db);
        h = g.deconv2d(h, dwn, Some(dbn))?;
        h = g.relu(h);
        let (ow, ob) = self.out;
        let own = g.param(params, ow);
        let obn = g.param(params, ob);
        g.conv2d(h, own, Some(obn), 1, 0)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (w, b) in &self.convs {
            ids.push(*w);
            ids.push(*b);
        }
        ids.extend([self.deconv.0, self.deconv.1, self.out.0, self.out.1]);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{BranchKind, MaskVariant};

    fn roi_feature(c: usize, s: usize, seed: u64) -> Tensor {
        let mut rng = Rng::seeded(seed);
        Tensor::from_vec(
            vec![c, s, s],
            (0..c * s * s).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn fcn_branch_output_shape_doubles_spatially() {
        let config = HeadConfig { num_classes: 3, mask_resolution: 14, ..HeadConfig::default() };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(41);
        let branch = build_mask_branch(&mut params, "mask", &config, 32, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(32, 7, 42));
        let y = branch.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 14, 14]);
    }

    #[test]
    fn class_agnostic_branch_outputs_single_channel() {
        let config = HeadConfig {
            num_classes: 3,
            mask_variant: MaskVariant::ClassAgnostic,
            mask_resolution: 8,
            ..HeadConfig::default()
        };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(43);
        let branch = build_mask_branch(&mut params, "mask", &config, 16, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(16, 4, 44));
        let y = branch.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 8, 8]);
    }

    #[test]
    fn wrong_spatial_input_rejected() {
        let config = HeadConfig { mask_resolution: 14, ..HeadConfig::default() };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(45);
        let branch = build_mask_branch(&mut params, "mask", &config, 32, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(32, 6, 46)); // 6 != 14/2
        assert!(branch.forward(&mut g, &params, x).is_err());
    }

    #[test]
    fn mlp_branch_shapes_and_zero_weight_bias_passthrough() {
        let config = HeadConfig {
            num_classes: 2,
            mask_resolution: 8,
            branch_kind: BranchKind::Mlp,
            mlp_hidden: 16,
            ..HeadConfig::default()
        };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(47);
        let branch = build_mask_branch(&mut params, "mask", &config, 8, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(8, 4, 48));
        let y = branch.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 8, 8]);

        // zero out the final layer's weight: logits all equal its bias
        if let MaskBranch::Mlp(mlp) = &branch {
            let (ow, ob) = mlp.fc_out;
            for v in params.value_mut(ow).data_mut() {
                *v = 0.0;
            }
            for v in params.value_mut(ob).data_mut() {
                *v = 0.125;
            }
            let mut g2 = Graph::new();
            let x2 = g2.input(roi_feature(8, 4, 49));
            let y2 = branch.forward(&mut g2, &params, x2).unwrap();
            assert!(g2.value(y2).data().iter().all(|&v| v == 0.125));
        } else {
            panic!("expected mlp branch");
        }
    }

    #[test]
    fn fcn_has_fewer_parameters_than_mlp_at_equal_m_and_k() {
        let base = HeadConfig {
            num_classes: 3,
            mask_resolution: 14,
            channel_width: 32,
            mlp_hidden: 128,
            ..HeadConfig::default()
        };
        let mut rng = Rng::seeded(50);
        let mut p1 = ParamSet::new();
        let fcn = build_mask_branch(&mut p1, "mask", &base, 32, &mut rng).unwrap();
        let mut p2 = ParamSet::new();
        let mlp_cfg = HeadConfig { branch_kind: BranchKind::Mlp, ..base };
        let mlp = build_mask_branch(&mut p2, "mask", &mlp_cfg, 32, &mut rng).unwrap();
        let (n_fcn, n_mlp) = (fcn.param_count(&p1), mlp.param_count(&p2));
        assert!(
            n_fcn < n_mlp,
            "fcn {n_fcn} params should be fewer than mlp {n_mlp}"
        );
    }

    #[test]
    fn box_head_output_shapes() {
        let config = HeadConfig { num_classes: 3, mlp_hidden: 32, ..HeadConfig::default() };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(51);
        let head = BoxHead::new(&mut params, "box", &config, 16, 7, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(16, 7, 52));
        let (cls, bbox) = head.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(cls).shape(), &[4]);
        assert_eq!(g.value(bbox).shape(), &[3, 4]);
    }

    #[test]
    fn keypoint_branch_shape() {
        let config = HeadConfig {
            keypoint_count: 3,
            keypoint_resolution: 28,
            ..HeadConfig::default()
        };
        let mut params = ParamSet::new();
        let mut rng = Rng::seeded(53);
        let branch = KeypointBranch::new(&mut params, "kp", &config, 32, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(roi_feature(32, 14, 54));
        let y = branch.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 28, 28]);
    }
}
