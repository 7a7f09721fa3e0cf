//! Experiment configuration: every knob of every module in one flat
//! key = value file with section headers. Unknown keys are rejected;
//! omitted keys take the documented defaults; serialization is canonical
//! so equal configs hash equal.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hash::fnv64_hex;
use crate::heads::{BranchKind, HeadConfig, MaskVariant};
use crate::roi::{Aggregation, RoiKind};
use crate::synth::SceneSpec;

/// The five RoI operator variants under ablation (the only supported
/// combinations of kind and aggregation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiOpChoice {
    AlignAverage,
    AlignMax,
    PoolMax,
    WarpAverage,
    WarpMax,
}

impl RoiOpChoice {
    pub fn kind(self) -> RoiKind {
        match self {
            RoiOpChoice::AlignAverage | RoiOpChoice::AlignMax => RoiKind::Align,
            RoiOpChoice::PoolMax => RoiKind::Pool,
            RoiOpChoice::WarpAverage | RoiOpChoice::WarpMax => RoiKind::Warp,
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            RoiOpChoice::AlignAverage | RoiOpChoice::WarpAverage => Aggregation::Average,
            _ => Aggregation::Max,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoiOpChoice::AlignAverage => "align-avg",
            RoiOpChoice::AlignMax => "align-max",
            RoiOpChoice::PoolMax => "pool-max",
            RoiOpChoice::WarpAverage => "warp-avg",
            RoiOpChoice::WarpMax => "warp-max",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "align-avg" => RoiOpChoice::AlignAverage,
            "align-max" => RoiOpChoice::AlignMax,
            "pool-max" => RoiOpChoice::PoolMax,
            "warp-avg" => RoiOpChoice::WarpAverage,
            "warp-max" => RoiOpChoice::WarpMax,
            other => return Err(Error::parse(format!("unknown roi op '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Oracle,
    Rpn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Seeds for multi-seed runs; single-run commands use the first.
    pub seeds: Vec<u64>,

    // dataset
    pub data_path: String,
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub eval_scenes: usize,

    // backbone
    pub backbone_widths: Vec<usize>,
    pub backbone_stride: usize,

    // roi extraction
    pub roi_op: RoiOpChoice,
    pub sampling_points: usize,
    pub box_resolution: usize,

    // heads
    pub mask_enabled: bool,
    pub heads: HeadConfig,

    // proposals
    pub proposal_source: ProposalKind,
    pub oracle_jitter: f64,
    pub oracle_copies: usize,
    pub oracle_background: usize,
    pub rpn_top_n: usize,
    pub rpn_nms_threshold: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub rpn_batch: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,

    // training schedule
    pub iterations: usize,
    pub lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_at: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub images_per_step: usize,
    pub rois_per_image: usize,
    pub pos_fraction: f64,
    pub checkpoint_every: usize,
    pub divergence_limit: f64,

    // inference
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub mask_threshold: f64,

    // evaluation
    pub iou_thresholds: Vec<f64>,
    pub max_detections: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![7],
            data_path: "data/shapes".to_string(),
            scene: SceneSpec::default(),
            train_scenes: 1000,
            eval_scenes: 200,
            backbone_widths: vec![16, 32, 32],
            backbone_stride: 8,
            roi_op: RoiOpChoice::AlignAverage,
            sampling_points: 2,
            box_resolution: 7,
            mask_enabled: true,
            heads: HeadConfig::default(),
            proposal_source: ProposalKind::Oracle,
            oracle_jitter: 0.15,
            oracle_copies: 4,
            oracle_background: 8,
            rpn_top_n: 64,
            rpn_nms_threshold: 0.7,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            rpn_batch: 32,
            anchor_scales: vec![16.0, 32.0, 48.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            iterations: 3000,
            lr: 0.005,
            lr_drop_factor: 0.1,
            lr_drop_at: 2250,
            momentum: 0.9,
            weight_decay: 1e-4,
            images_per_step: 1,
            rois_per_image: 16,
            pos_fraction: 0.25,
            checkpoint_every: 0,
            divergence_limit: 1e4,
            score_threshold: 0.05,
            nms_threshold: 0.5,
            top_k: 100,
            mask_threshold: 0.5,
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            max_detections: 100,
        }
    }
}

fn join_u64(v: &[u64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::parse(format!("bad list entry '{}' for {key}", s.trim())))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::parse(format!("bad value '{value}' for {key}")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::parse(format!("bad bool '{other}' for {key}"))),
    }
}

impl ExperimentConfig {
    /// Canonical textual form; parsing it reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let h = &self.heads;
        let variant = match h.mask_variant {
            MaskVariant::SigmoidPerClass => "sigmoid",
            MaskVariant::SoftmaxMultinomial => "softmax",
            MaskVariant::ClassAgnostic => "agnostic",
        };
        let branch = match h.branch_kind {
            BranchKind::Fcn => "fcn",
            BranchKind::Mlp => "mlp",
        };
        let source = match self.proposal_source {
            ProposalKind::Oracle => "oracle",
            ProposalKind::Rpn => "rpn",
        };
        format!(
            "[run]\n\
             seeds = {seeds}\n\
             \n\
             [dataset]\n\
             path = {path}\n\
             image_h = {ih}\n\
             image_w = {iw}\n\
             min_instances = {mini}\n\
             max_instances = {maxi}\n\
             min_size = {mins}\n\
             max_size = {maxs}\n\
             overlap_bias = {bias}\n\
             noise = {noise}\n\
             scene_seed = {sseed}\n\
             train_scenes = {tsc}\n\
             eval_scenes = {esc}\n\
             \n\
             [backbone]\n\
             widths = {widths}\n\
             stride = {stride}\n\
             \n\
             [roi]\n\
             op = {op}\n\
             sampling_points = {sp}\n\
             box_resolution = {br}\n\
             \n\
             [heads]\n\
             num_classes = {k}\n\
             mask_enabled = {me}\n\
             mask_resolution = {m}\n\
             mask_variant = {variant}\n\
             mask_branch = {branch}\n\
             channel_width = {cw}\n\
             mlp_hidden = {mh}\n\
             keypoint_count = {kpc}\n\
             keypoint_resolution = {kpr}\n\
             \n\
             [proposals]\n\
             source = {source}\n\
             oracle_jitter = {oj}\n\
             oracle_copies = {oc}\n\
             oracle_background = {ob}\n\
             rpn_top_n = {rtn}\n\
             rpn_nms_threshold = {rnt}\n\
             rpn_pos_iou = {rpi}\n\
             rpn_neg_iou = {rni}\n\
             rpn_batch = {rb}\n\
             anchor_scales = {asc}\n\
             anchor_ratios = {ar}\n\
             \n\
             [train]\n\
             iterations = {it}\n\
             lr = {lr}\n\
             lr_drop_factor = {ldf}\n\
             lr_drop_at = {lda}\n\
             momentum = {mom}\n\
             weight_decay = {wd}\n\
             images_per_step = {ips}\n\
             rois_per_image = {rpi2}\n\
             pos_fraction = {pf}\n\
             checkpoint_every = {ce}\n\
             divergence_limit = {dl}\n\
             \n\
             [infer]\n\
             score_threshold = {st}\n\
             nms_threshold = {nt}\n\
             top_k = {tk}\n\
             mask_threshold = {mt}\n\
             \n\
             [eval]\n\
             iou_thresholds = {iot}\n\
             max_detections = {md}\n",
            seeds = join_u64(&self.seeds),
            path = self.data_path,
            ih = self.scene.image_h,
            iw = self.scene.image_w,
            mini = self.scene.min_instances,
            maxi = self.scene.max_instances,
            mins = self.scene.min_size,
            maxs = self.scene.max_size,
            bias = self.scene.overlap_bias,
            noise = self.scene.noise,
            sseed = self.scene.seed,
            tsc = self.train_scenes,
            esc = self.eval_scenes,
            widths = join_usize(&self.backbone_widths),
            stride = self.backbone_stride,
            op = self.roi_op.as_str(),
            sp = self.sampling_points,
            br = self.box_resolution,
            k = h.num_classes,
            me = self.mask_enabled,
            m = h.mask_resolution,
            cw = h.channel_width,
            mh = h.mlp_hidden,
            kpc = h.keypoint_count,
            kpr = h.keypoint_resolution,
            oj = self.oracle_jitter,
            oc = self.oracle_copies,
            ob = self.oracle_background,
            rtn = self.rpn_top_n,
            rnt = self.rpn_nms_threshold,
            rpi = self.rpn_pos_iou,
            rni = self.rpn_neg_iou,
            rb = self.rpn_batch,
            asc = join_f64(&self.anchor_scales),
            ar = join_f64(&self.anchor_ratios),
            it = self.iterations,
            lr = self.lr,
            ldf = self.lr_drop_factor,
            lda = self.lr_drop_at,
            mom = self.momentum,
            wd = self.weight_decay,
            ips = self.images_per_step,
            rpi2 = self.rois_per_image,
            pf = self.pos_fraction,
            ce = self.checkpoint_every,
            dl = self.divergence_limit,
            st = self.score_threshold,
            nt = self.nms_threshold,
            tk = self.top_k,
            mt = self.mask_threshold,
            iot = join_f64(&self.iou_thresholds),
            md = self.max_detections,
        )
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("run", "seeds") => self.seeds = parse_list(value, key)?,
            ("dataset", "path") => self.data_path = value.trim().to_string(),
            ("dataset", "image_h") => self.scene.image_h = parse_scalar(value, key)?,
            ("dataset", "image_w") => self.scene.image_w = parse_scalar(value, key)?,
            ("dataset", "min_instances") => self.scene.min_instances = parse_scalar(value, key)?,
            ("dataset", "max_instances") => self.scene.max_instances = parse_scalar(value, key)?,
            ("dataset", "min_size") => self.scene.min_size = parse_scalar(value, key)?,
            ("dataset", "max_size") => self.scene.max_size = parse_scalar(value, key)?,
            ("dataset", "overlap_bias") => self.scene.overlap_bias = parse_scalar(value, key)?,
            ("dataset", "noise") => self.scene.noise = parse_scalar(value, key)?,
            ("dataset", "scene_seed") => self.scene.seed = parse_scalar(value, key)?,
            ("dataset", "train_scenes") => self.train_scenes = parse_scalar(value, key)?,
            ("dataset", "eval_scenes") => self.eval_scenes = parse_scalar(value, key)?,
            ("backbone", "widths") => self.backbone_widths = parse_list(value, key)?,
            ("backbone", "stride") => self.backbone_stride = parse_scalar(value, key)?,
            ("roi", "op") => self.roi_op = RoiOpChoice::parse(value.trim())?,
            ("roi", "sampling_points") => self.sampling_points = parse_scalar(value, key)?,
            ("roi", "box_resolution") => self.box_resolution = parse_scalar(value, key)?,
            ("heads", "num_classes") => self.heads.num_classes = parse_scalar(value, key)?,
            ("heads", "mask_enabled") => self.mask_enabled = parse_bool(value, key)?,
            ("heads", "mask_resolution") => self.heads.mask_resolution = parse_scalar(value, key)?,
            ("heads", "mask_variant") => {
                self.heads.mask_variant = match value.trim() {
                    "sigmoid" => MaskVariant::SigmoidPerClass,
                    "softmax" => MaskVariant::SoftmaxMultinomial,
                    "agnostic" => MaskVariant::ClassAgnostic,
                    other => return Err(Error::parse(format!("unknown mask_variant '{other}'"))),
                }
            }
            ("heads", "mask_branch") => {
                self.heads.branch_kind = match value.trim() {
                    "fcn" => BranchKind::Fcn,
                    "mlp" => BranchKind::Mlp,
                    other => return Err(Error::parse(format!("unknown mask_branch '{other}'"))),
                }
            }
            ("heads", "channel_width") => self.heads.channel_width = parse_scalar(value, key)?,
            ("heads", "mlp_hidden") => self.heads.mlp_hidden = parse_scalar(value, key)?,
            ("heads", "keypoint_count") => self.heads.keypoint_count = parse_scalar(value, key)?,
            ("heads", "keypoint_resolution") => {
                self.heads.keypoint_resolution = parse_scalar(value, key)?
            }
            ("proposals", "source") => {
                self.proposal_source = match value.trim() {
                    "oracle" => ProposalKind::Oracle,
                    "rpn" => ProposalKind::Rpn,
                    other => {
                        return Err(Error::parse(format!("unknown proposal source '{other}'")))
                    }
                }
            }
            ("proposals", "oracle_jitter") => self.oracle_jitter = parse_scalar(value, key)?,
            ("proposals", "oracle_copies") => self.oracle_copies = parse_scalar(value, key)?,
            ("proposals", "oracle_background") => {
                self.oracle_background = parse_scalar(value, key)?
            }
            ("proposals", "rpn_top_n") => self.rpn_top_n = parse_scalar(value, key)?,
            ("proposals", "rpn_nms_threshold") => {
                self.rpn_nms_threshold = parse_scalar(value, key)?
            }
            ("proposals", "rpn_pos_iou") => self.rpn_pos_iou = parse_scalar(value, key)?,
            ("proposals", "rpn_neg_iou") => self.rpn_neg_iou = parse_scalar(value, key)?,
            ("proposals", "rpn_batch") => self.rpn_batch = parse_scalar(value, key)?,
            ("proposals", "anchor_scales") => self.anchor_scales = parse_list(value, key)?,
            ("proposals", "anchor_ratios") => self.anchor_ratios = parse_list(value, key)?,
            ("train", "iterations") => self.iterations = parse_scalar(value, key)?,
            ("train", "lr") => self.lr = parse_scalar(value, key)?,
            ("train", "lr_drop_factor") => self.lr_drop_factor = parse_scalar(value, key)?,
            ("train", "lr_drop_at") => self.lr_drop_at = parse_scalar(value, key)?,
            ("train", "momentum") => self.momentum = parse_scalar(value, key)?,
            ("train", "weight_decay") => self.weight_decay = parse_scalar(value, key)?,
            ("train", "images_per_step") => self.images_per_step = parse_scalar(value, key)?,
            ("train", "rois_per_image") => self.rois_per_image = parse_scalar(value, key)?,
            ("train", "pos_fraction") => self.pos_fraction = parse_scalar(value, key)?,
            ("train", "checkpoint_every") => self.checkpoint_every = parse_scalar(value, key)?,
            ("train", "divergence_limit") => self.divergence_limit = parse_scalar(value, key)?,
            ("infer", "score_threshold") => self.score_threshold = parse_scalar(value, key)?,
            ("infer", "nms_threshold") => self.nms_threshold = parse_scalar(value, key)?,
            ("infer", "top_k") => self.top_k = parse_scalar(value, key)?,
            ("infer", "mask_threshold") => self.mask_threshold = parse_scalar(value, key)?,
            ("eval", "iou_thresholds") => self.iou_thresholds = parse_list(value, key)?,
            ("eval", "max_detections") => self.max_detections = parse_scalar(value, key)?,
            _ => {
                return Err(Error::parse(format!("unknown config key '[{section}] {key}'")));
            }
        }
        Ok(())
    }

    /// Parse overrides on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(format!(
                    "config line {}: expected key = value",
                    lineno + 1
                )));
            };
            config.apply(&section, key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.heads.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("config: seeds must be nonempty".to_string()));
        }
        if !matches!(self.backbone_stride, 4 | 8 | 16 | 32) {
            return Err(Error::invalid(
                "config: backbone stride must be 4, 8, 16, or 32".to_string(),
            ));
        }
        let stages = (self.backbone_stride as f64).log2() as usize;
        if self.backbone_widths.len() != stages {
            return Err(Error::invalid(format!(
                "config: stride {} needs {} stage widths, got {}",
                self.backbone_stride,
                stages,
                self.backbone_widths.len()
            )));
        }
        if !self.scene.image_h.is_multiple_of(self.backbone_stride)
            || !self.scene.image_w.is_multiple_of(self.backbone_stride)
        {
            return Err(Error::invalid(
                "config: image extents must be divisible by the stride".to_string(),
            ));
        }
        if self.sampling_points == 0 || self.box_resolution == 0 {
            return Err(Error::invalid("config: roi parameters must be positive".to_string()));
        }
        if self.iterations == 0 || self.lr_drop_at >= self.iterations {
            return Err(Error::invalid(
                "config: lr drop point must fall before the end of training".to_string(),
            ));
        }
        if self.rois_per_image < 4 {
            return Err(Error::invalid("config: rois_per_image must be >= 4".to_string()));
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return Err(Error::invalid("config: pos_fraction must be in (0,1)".to_string()));
        }
        if self.images_per_step == 0 {
            return Err(Error::invalid("config: images_per_step must be positive".to_string()));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return Err(Error::invalid("config: scene counts must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold)
            || !(0.0..=1.0).contains(&self.nms_threshold)
            || !(0.0..=1.0).contains(&self.mask_threshold)
        {
            return Err(Error::invalid(
                "config: inference thresholds must be in [0,1]".to_string(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("config: top_k must be >= 1".to_string()));
        }
        for w in self.iou_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(
                    "config: iou_thresholds must be strictly increasing".to_string(),
                ));
            }
        }
        if self.iou_thresholds.iter().any(|&t| t <= 0.0 || t > 1.0) {
            return Err(Error::invalid("config: iou_thresholds must lie in (0,1]".to_string()));
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return Err(Error::invalid("config: anchors need scales and ratios".to_string()));
        }
        Ok(())
    }

    /// Hash of the canonical text; used to prefix output files.
    pub fn hash_hex(&self) -> String {
        fnv64_hex(self.to_text().as_bytes())
    }

    fn key_values(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut section = String::new();
        for line in self.to_text().lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = line.trim_matches(['[', ']']).to_string();
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                out.insert(format!("{section}.{}", k.trim()), v.trim().to_string());
            }
        }
        out
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &ExperimentConfig) -> Vec<String> {
        let (a, b) = (self.key_values(), other.key_values());
        a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect()
    }
}
