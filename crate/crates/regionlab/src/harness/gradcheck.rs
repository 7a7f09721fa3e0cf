//! Gradient verification suites: per-op finite differences, the loss
//! kernels, and a sampled end-to-end check of the full training loss.

use crate::boxes::BBox;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::heads::{
    cls_loss, make_mask_target, mask_loss, mean_loss, total_loss, BoxLoss, KeypointLoss,
    MaskSigmoidLoss, MaskSoftmaxLoss,
};
use crate::rng::Rng;
use crate::roi::{Aggregation, RoiExtract, RoiKind, RoiOpSpec};
use crate::synth::generate_scene;
use crate::tensor::{
    glorot_uniform, grad_check, Graph, NodeId, ParamId, ParamSet, Tensor, FD_STEP, GRAD_REL_TOL,
};

/// The end-to-end scope checks the full multi-task loss, whose value
/// (~ln(m^2) from the keypoint term) makes central differences at step
/// 1e-5 noise-limited near 1e-5 relative on small-gradient coordinates;
/// widening the step instead starts clipping rectifier kinks. The scope
/// keeps the 1e-5 step but is judged against its conditioning floor.
/// Per-op and per-loss scopes keep the strict 1e-6 bound.
pub const END2END_FD_STEP: f64 = 1e-5;
pub const END2END_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    Ops,
    Losses,
    EndToEnd,
}

impl GradScope {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ops" => GradScope::Ops,
            "losses" => GradScope::Losses,
            "end2end" => GradScope::EndToEnd,
            other => return Err(Error::invalid(format!("unknown gradcheck scope '{other}'"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub excluded: usize,
    pub checked: usize,
    /// Bound this row was judged against.
    pub tolerance: f64,
    pub pass: bool,
}

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.range_f64(-1.0, 1.0)).collect())
        .expect("shape matches data")
}

fn rand_target(m: usize, rng: &mut Rng) -> Vec<u8> {
    (0..m * m).map(|_| u8::from(rng.uniform() < 0.5)).collect()
}

type Builder = Box<dyn Fn(&mut Graph, &ParamSet, &[ParamId]) -> Result<NodeId>>;

struct Case {
    name: String,
    params: ParamSet,
    check: Vec<ParamId>,
    build: Builder,
}

fn check_case(case: Case) -> Vec<GradCheckRow> {
    let Case { name, mut params, check, build } = case;
    let check_for_closure = check.clone();
    check
        .iter()
        .enumerate()
        .map(|(i, &pid)| {
            let build = &build;
            let ids = check_for_closure.clone();
            let outcome = grad_check(&mut params, pid, FD_STEP, |g, ps| build(g, ps, &ids));
            match outcome {
                Ok(o) => GradCheckRow {
                    name: format!("{name}[{i}]"),
                    max_rel_err: o.max_rel_err,
                    excluded: o.excluded,
                    checked: o.checked,
                    tolerance: GRAD_REL_TOL,
                    pass: o.passes(),
                },
                Err(err) => GradCheckRow {
                    name: format!("{name}[{i}]: {err}"),
                    max_rel_err: f64::INFINITY,
                    excluded: 0,
                    checked: 0,
                    tolerance: GRAD_REL_TOL,
                    pass: false,
                },
            }
        })
        .collect()
}

fn op_cases() -> Vec<Case> {
    let mut rng = Rng::seeded(0xC0DE);
    let mut cases: Vec<Case> = Vec::new();

    // conv2d: stride 1 pad 0 and stride 1 pad 1 (input and weight grads)
    for (tag, stride, pad) in [("s1p0", 1usize, 0usize), ("s1p1", 1, 1)] {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[2, 5, 5], &mut rng)).unwrap();
        let w = params.register("w", glorot_uniform(&[3, 2, 3, 3], 18, 27, &mut rng)).unwrap();
        let b = params.register("b", rand_tensor(&[3], &mut rng)).unwrap();
        cases.push(Case {
            name: format!("conv2d_{tag}"),
            params,
            check: vec![x, w, b],
            build: Box::new(move |g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let wn = g.param(ps, ids[1]);
                let bn = g.param(ps, ids[2]);
                let y = g.conv2d(xn, wn, Some(bn), stride, pad)?;
                Ok(g.sum(y))
            }),
        });
    }

    // deconv2d
    {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[2, 3, 3], &mut rng)).unwrap();
        let w = params.register("w", glorot_uniform(&[2, 3, 2, 2], 8, 12, &mut rng)).unwrap();
        let b = params.register("b", rand_tensor(&[3], &mut rng)).unwrap();
        cases.push(Case {
            name: "deconv2d".to_string(),
            params,
            check: vec![x, w, b],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let wn = g.param(ps, ids[1]);
                let bn = g.param(ps, ids[2]);
                let y = g.deconv2d(xn, wn, Some(bn))?;
                Ok(g.sum(y))
            }),
        });
    }

    // downsample2d
    {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[2, 4, 4], &mut rng)).unwrap();
        let w = params.register("w", glorot_uniform(&[3, 2, 2, 2], 8, 12, &mut rng)).unwrap();
        let b = params.register("b", rand_tensor(&[3], &mut rng)).unwrap();
        cases.push(Case {
            name: "downsample2d".to_string(),
            params,
            check: vec![x, w, b],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let wn = g.param(ps, ids[1]);
                let bn = g.param(ps, ids[2]);
                let y = g.downsample2d(xn, wn, Some(bn))?;
                Ok(g.sum(y))
            }),
        });
    }

    // linear
    {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[2, 4], &mut rng)).unwrap();
        let w = params.register("w", glorot_uniform(&[4, 3], 4, 3, &mut rng)).unwrap();
        let b = params.register("b", rand_tensor(&[3], &mut rng)).unwrap();
        cases.push(Case {
            name: "linear".to_string(),
            params,
            check: vec![x, w, b],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let wn = g.param(ps, ids[1]);
                let bn = g.param(ps, ids[2]);
                let y = g.linear(xn, wn, bn)?;
                Ok(g.sum(y))
            }),
        });
    }

    // activations; relu input shifted away from its kink
    {
        let mut params = ParamSet::new();
        let data: Vec<f64> = (0..12)
            .map(|_| {
                let v = rng.range_f64(-1.0, 1.0);
                if v.abs() < 0.05 {
                    v + 0.1
                } else {
                    v
                }
            })
            .collect();
        let x = params.register("x", Tensor::from_vec(vec![12], data).unwrap()).unwrap();
        cases.push(Case {
            name: "relu".to_string(),
            params,
            check: vec![x],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let y = g.relu(xn);
                Ok(g.sum(y))
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[12], &mut rng)).unwrap();
        cases.push(Case {
            name: "sigmoid".to_string(),
            params,
            check: vec![x],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let y = g.sigmoid(xn);
                Ok(g.sum(y))
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("x", rand_tensor(&[3, 4], &mut rng)).unwrap();
        // weight the softmax so the gradient is not identically zero
        let weights = rand_tensor(&[3, 4], &mut rng);
        cases.push(Case {
            name: "softmax".to_string(),
            params,
            check: vec![x],
            build: Box::new(move |g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                let y = g.softmax(xn, 1)?;
                let wn = g.input(weights.clone());
                let prod = {
                    // elementwise product via sigmoid-free path: sum(y * w)
                    // implemented with a custom accumulation through add/scale
                    // is clumsy; reuse linear by flattening
                    let yf = g.reshape(y, &[1, 12])?;
                    let wf = g.reshape(wn, &[12, 1])?;
                    let zero = g.input(Tensor::zeros(&[1]));
                    g.linear(yf, wf, zero)?
                };
                Ok(g.sum(prod))
            }),
        });
    }

    // the three RoI operators, on a RoI away from switching boundaries
    for (tag, kind, agg) in [
        ("roi_align_avg", RoiKind::Align, Aggregation::Average),
        ("roi_align_max", RoiKind::Align, Aggregation::Max),
        ("roi_pool_max", RoiKind::Pool, Aggregation::Max),
        ("roi_warp_avg", RoiKind::Warp, Aggregation::Average),
        ("roi_warp_max", RoiKind::Warp, Aggregation::Max),
    ] {
        let mut params = ParamSet::new();
        let x = params.register("feature", rand_tensor(&[2, 8, 8], &mut rng)).unwrap();
        let spec = RoiOpSpec::new(kind, 3, 3, 2, agg, 1.0).unwrap();
        let roi = BBox::new(1.23, 0.87, 6.41, 6.09).unwrap();
        cases.push(Case {
            name: tag.to_string(),
            params,
            check: vec![x],
            build: Box::new(move |g, ps, ids| {
                let f = g.param(ps, ids[0]);
                let y = g.apply(RoiExtract { roi, spec }, &[f])?;
                Ok(g.sum(y))
            }),
        });
    }

    cases
}

fn loss_cases() -> Vec<Case> {
    let mut rng = Rng::seeded(0x105E);
    let mut cases: Vec<Case> = Vec::new();
    let m = 4;

    {
        let mut params = ParamSet::new();
        let x = params.register("logits", rand_tensor(&[3, m, m], &mut rng)).unwrap();
        let target = rand_target(m, &mut rng);
        cases.push(Case {
            name: "mask_loss_sigmoid".to_string(),
            params,
            check: vec![x],
            build: Box::new(move |g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                g.apply(MaskSigmoidLoss { channel: 1, target: target.clone() }, &[xn])
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("logits", rand_tensor(&[4, m, m], &mut rng)).unwrap();
        let target = rand_target(m, &mut rng);
        cases.push(Case {
            name: "mask_loss_softmax".to_string(),
            params,
            check: vec![x],
            build: Box::new(move |g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                g.apply(MaskSoftmaxLoss { channel: 2, target: target.clone() }, &[xn])
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("logits", rand_tensor(&[5], &mut rng)).unwrap();
        cases.push(Case {
            name: "cls_loss".to_string(),
            params,
            check: vec![x],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                cls_loss(g, xn, 2)
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("pred", rand_tensor(&[3, 4], &mut rng)).unwrap();
        cases.push(Case {
            name: "box_loss".to_string(),
            params,
            check: vec![x],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                g.apply(BoxLoss { row: 1, target: [0.2, -0.1, 0.3, 0.05] }, &[xn])
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let x = params.register("heatmaps", rand_tensor(&[3, m, m], &mut rng)).unwrap();
        cases.push(Case {
            name: "keypoint_loss".to_string(),
            params,
            check: vec![x],
            build: Box::new(|g, ps, ids| {
                let xn = g.param(ps, ids[0]);
                g.apply(KeypointLoss { target: vec![Some(3), None, Some(9)] }, &[xn])
            }),
        });
    }
    cases
}

pub fn run_gradcheck(scope: GradScope) -> Result<Vec<GradCheckRow>> {
    let rows = match scope {
        GradScope::Ops => op_cases().into_iter().flat_map(check_case).collect(),
        GradScope::Losses => loss_cases().into_iter().flat_map(check_case).collect(),
        GradScope::EndToEnd => end_to_end_check()?,
    };
    Ok(rows)
}

/// A tiny but complete training loss (backbone, RoI extraction, all
/// heads) checked by finite differences on ~1% of the parameters.
fn end_to_end_check() -> Result<Vec<GradCheckRow>> {
    let mut config = ExperimentConfig::default();
    config.scene.image_h = 32;
    config.scene.image_w = 32;
    config.scene.min_size = 12.0;
    config.scene.max_size = 16.0;
    config.scene.min_instances = 1;
    config.scene.max_instances = 2;
    config.backbone_widths = vec![4, 6];
    config.backbone_stride = 4;
    config.heads.channel_width = 6;
    config.heads.mlp_hidden = 12;
    config.heads.mask_resolution = 8;
    config.heads.keypoint_count = 3;
    config.heads.keypoint_resolution = 8;
    config.box_resolution = 4;
    config.rois_per_image = 8;
    config.iterations = 10;
    config.lr_drop_at = 8;

    let scene = generate_scene(&config.scene, 1)?;
    let mut params = crate::pipeline::Model::new(&config, 3)?.params.clone();
    let m = config.heads.mask_resolution;
    let kp_res = config.heads.keypoint_resolution;
    let gts: Vec<(BBox, usize)> = scene.annotations.iter().map(|a| (a.bbox, a.class)).collect();
    let mut rng = Rng::seeded(77);
    let proposals = crate::pipeline::oracle_proposals(&scene.annotations, &config, &mut rng);
    let sampler = crate::boxes::SamplerConfig {
        rois_per_image: config.rois_per_image,
        pos_fraction: config.pos_fraction,
        pos_iou: 0.5,
    };
    let samples = crate::boxes::match_and_sample(&proposals, &gts, &sampler, &mut rng)?;
    if !samples.iter().any(|s| s.is_positive()) {
        return Err(Error::invalid("end2end check drew no positives; reseed".to_string()));
    }

    // rebuild the full multi-task loss from model structure + samples;
    // parameters are read from the ParamSet being perturbed
    let config2 = config.clone();
    let scene2 = scene.clone();
    let samples2 = samples.clone();
    fn spec_for(config: &ExperimentConfig, out: usize) -> RoiOpSpec {
        RoiOpSpec::new(
            config.roi_op.kind(),
            out,
            out,
            config.sampling_points,
            config.roi_op.aggregation(),
            config.backbone_stride as f64,
        )
        .expect("valid spec")
    }
    let build = move |g: &mut Graph, ps: &ParamSet| -> Result<NodeId> {
        // weights come from `ps` via a model whose structure (ParamIds)
        // matches; Model::run_backbone reads its own params, so wire the
        // forward manually through a params snapshot
        let mut model_view = crate::pipeline::Model::new(&config2, 3)?;
        for id in model_view.params.ids().collect::<Vec<_>>() {
            *model_view.params.value_mut(id) = ps.value(id).clone();
        }
        let image = g.input(scene2.image.clone());
        let feature = model_view.run_backbone(g, image)?;
        let mut cls_terms = Vec::new();
        let mut box_terms = Vec::new();
        let mut mask_terms = Vec::new();
        let mut kp_terms = Vec::new();
        for sample in &samples2 {
            let rf = g.apply(
                RoiExtract { roi: sample.roi, spec: spec_for(&config2, config2.box_resolution) },
                &[feature],
            )?;
            let (cls_logits, deltas) = model_view.box_head.forward(g, &model_view.params, rf)?;
            cls_terms.push(cls_loss(g, cls_logits, sample.label)?);
            if !sample.is_positive() {
                continue;
            }
            box_terms.push(crate::heads::box_loss(
                g,
                deltas,
                sample.regression_target.expect("positive"),
                sample.label,
            )?);
            let gt = &scene2.annotations[sample.matched_gt.expect("positive")];
            if let Some(branch) = &model_view.mask_branch {
                let mrf =
                    g.apply(RoiExtract { roi: sample.roi, spec: spec_for(&config2, m / 2) }, &[feature])?;
                let logits = branch.forward(g, &model_view.params, mrf)?;
                let target = make_mask_target(&sample.roi, &gt.mask, m, sample.label)?;
                mask_terms.push(mask_loss(g, &config2.heads, logits, &target)?);
            }
            if let Some(branch) = &model_view.keypoint_branch {
                let krf = g
                    .apply(RoiExtract { roi: sample.roi, spec: spec_for(&config2, kp_res / 2) }, &[feature])?;
                let logits = branch.forward(g, &model_view.params, krf)?;
                let target =
                    crate::heads::make_keypoint_target(&sample.roi, &gt.keypoints, kp_res)?;
                kp_terms.push(crate::heads::keypoint_loss(g, logits, &target)?);
            }
        }
        let c = mean_loss(g, &cls_terms)?;
        let b = mean_loss(g, &box_terms)?;
        let mk = mean_loss(g, &mask_terms)?;
        let kp = mean_loss(g, &kp_terms)?;
        total_loss(g, &[c, b, mk, kp])
    };

    let total: usize = params.numel();
    let sample_budget = (total / 100).clamp(24, 120);
    let ids: Vec<ParamId> = params.ids().collect();
    let mut rows = Vec::new();
    let mut rng2 = Rng::seeded(0xE2E);
    let mut remaining = sample_budget;
    // analytic gradient once
    let analytic: Vec<(ParamId, Tensor)> = {
        let mut g = Graph::new();
        let loss = build(&mut g, &params)?;
        let grads = g.backward(loss)?;
        ids.iter()
            .map(|&id| {
                let grad = grads
                    .params()
                    .iter()
                    .find(|(pid, _)| *pid == id)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| Tensor::zeros(params.value(id).shape()));
                (id, grad)
            })
            .collect()
    };
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        Ok(g.value(loss).item())
    };
    let f0 = eval(&params)?;
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut checked = 0usize;
    let mut excluded = 0usize;
    while remaining > 0 {
        let id = ids[rng2.below(ids.len())];
        let n = params.value(id).numel();
        let coord = rng2.below(n);
        remaining -= 1;
        let orig = params.value(id).data()[coord];
        params.value_mut(id).data_mut()[coord] = orig + END2END_FD_STEP;
        let f_plus = eval(&params)?;
        params.value_mut(id).data_mut()[coord] = orig - END2END_FD_STEP;
        let f_minus = eval(&params)?;
        params.value_mut(id).data_mut()[coord] = orig;
        let d_plus = (f_plus - f0) / END2END_FD_STEP;
        let d_minus = (f0 - f_minus) / END2END_FD_STEP;
        if (d_plus - d_minus).abs() > 1e-3 * d_plus.abs().max(d_minus.abs()).max(1.0) {
            excluded += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * END2END_FD_STEP);
        let a = analytic.iter().find(|(pid, _)| *pid == id).expect("all ids present").1.data()
            [coord];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        let rel = (a - numeric).abs() / denom;
        checked += 1;
        if rel > worst {
            worst = rel;
            worst_name = format!("{}[{coord}]", params.name(id));
        }
    }
    rows.push(GradCheckRow {
        name: format!("end2end_total_loss (worst: {worst_name})"),
        max_rel_err: worst,
        excluded,
        checked,
        tolerance: END2END_REL_TOL,
        pass: worst < END2END_REL_TOL,
    });
    Ok(rows)
}
