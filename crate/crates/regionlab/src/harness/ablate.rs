//! The ablation matrix: train every variant of one axis on identical
//! data and seeds, evaluate, and report per-seed metrics with medians,
//! deltas against the first variant, and sign counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use crate::config::{ExperimentConfig, RoiOpChoice};
use crate::error::{Error, Result};
use crate::heads::{BranchKind, MaskVariant};
use crate::pipeline::{run_tag, train};
use crate::synth::Dataset;

use super::evalrun::{evaluate_model, write_report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    RoiOp,
    MaskLoss,
    Branch,
    Agnostic,
    KeypointRoiOp,
    Multitask,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "roiop" => AblationAxis::RoiOp,
            "maskloss" => AblationAxis::MaskLoss,
            "branch" => AblationAxis::Branch,
            "agnostic" => AblationAxis::Agnostic,
            "keypoint_roiop" => AblationAxis::KeypointRoiOp,
            "multitask" => AblationAxis::Multitask,
            other => return Err(Error::invalid(format!("unknown ablation axis '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::RoiOp => "roiop",
            AblationAxis::MaskLoss => "maskloss",
            AblationAxis::Branch => "branch",
            AblationAxis::Agnostic => "agnostic",
            AblationAxis::KeypointRoiOp => "keypoint_roiop",
            AblationAxis::Multitask => "multitask",
        }
    }

    /// The metric whose deltas and sign counts headline the axis.
    pub fn headline_metric(self) -> &'static str {
        match self {
            AblationAxis::KeypointRoiOp => "kp_pck2",
            AblationAxis::Multitask => "box_ap",
            _ => "mask_ap",
        }
    }

    /// Variant list; each differs from the first in exactly one config
    /// key. The keypoint axis enables the keypoint head in the shared
    /// base before splitting, so the single varying key stays roi.op.
    pub fn variants(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let mut out = Vec::new();
        match self {
            AblationAxis::RoiOp => {
                for op in [
                    RoiOpChoice::AlignAverage,
                    RoiOpChoice::AlignMax,
                    RoiOpChoice::PoolMax,
                    RoiOpChoice::WarpMax,
                    RoiOpChoice::WarpAverage,
                ] {
                    let mut cfg = base.clone();
                    cfg.roi_op = op;
                    out.push((op.as_str().to_string(), cfg));
                }
            }
            AblationAxis::MaskLoss => {
                for (name, variant) in [
                    ("sigmoid", MaskVariant::SigmoidPerClass),
                    ("softmax", MaskVariant::SoftmaxMultinomial),
                ] {
                    let mut cfg = base.clone();
                    cfg.heads.mask_variant = variant;
                    out.push((name.to_string(), cfg));
                }
            }
            AblationAxis::Branch => {
                for (name, kind) in [("fcn", BranchKind::Fcn), ("mlp", BranchKind::Mlp)] {
                    let mut cfg = base.clone();
                    cfg.heads.branch_kind = kind;
                    out.push((name.to_string(), cfg));
                }
            }
            AblationAxis::Agnostic => {
                for (name, variant) in [
                    ("class_specific", MaskVariant::SigmoidPerClass),
                    ("class_agnostic", MaskVariant::ClassAgnostic),
                ] {
                    let mut cfg = base.clone();
                    cfg.heads.mask_variant = variant;
                    out.push((name.to_string(), cfg));
                }
            }
            AblationAxis::KeypointRoiOp => {
                let mut shared = base.clone();
                if shared.heads.keypoint_count == 0 {
                    shared.heads.keypoint_count = crate::synth::KEYPOINTS_PER_INSTANCE;
                }
                for op in [RoiOpChoice::AlignAverage, RoiOpChoice::PoolMax] {
                    let mut cfg = shared.clone();
                    cfg.roi_op = op;
                    out.push((format!("kp-{}", op.as_str()), cfg));
                }
            }
            AblationAxis::Multitask => {
                for (name, enabled) in [("with_mask", true), ("box_only", false)] {
                    let mut cfg = base.clone();
                    cfg.mask_enabled = enabled;
                    out.push((name.to_string(), cfg));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub rows: Option<BTreeMap<String, f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub name: String,
    pub config_hash: String,
    pub cells: Vec<CellResult>,
    /// Median over successful seeds, per metric.
    pub medians: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub axis: String,
    pub headline: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn summarize_variant(name: &str, hash: &str, cells: Vec<CellResult>) -> VariantSummary {
    let mut keys: Vec<String> = Vec::new();
    for cell in &cells {
        if let Some(rows) = &cell.rows {
            for k in rows.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
    }
    let mut medians = BTreeMap::new();
    for key in keys {
        let mut values: Vec<f64> = cells
            .iter()
            .filter_map(|c| c.rows.as_ref().and_then(|r| r.get(&key)).copied())
            .collect();
        if !values.is_empty() {
            medians.insert(key, median(&mut values));
        }
    }
    VariantSummary { name: name.to_string(), config_hash: hash.to_string(), cells, medians }
}

/// Worker-thread cap: REGIONLAB_THREADS when set, else the machine's
/// available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("REGIONLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

fn run_cell(
    config: &ExperimentConfig,
    seed: u64,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    out_dir: Option<&Path>,
) -> CellResult {
    let outcome = (|| -> Result<BTreeMap<String, f64>> {
        let artifacts = train(config, seed, train_ds, out_dir)?;
        let rows = evaluate_model(&artifacts.model, eval_ds)?.rows;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("{}-report.txt", run_tag(config, seed)));
            write_report(&path, &rows, &config.hash_hex(), seed)?;
        }
        Ok(rows)
    })();
    match outcome {
        Ok(rows) => CellResult { seed, rows: Some(rows), error: None },
        Err(err) => CellResult { seed, rows: None, error: Some(err.to_string()) },
    }
}

/// Train and evaluate every (variant, seed) cell. Cells run in parallel
/// up to [`thread_cap`]; a failing cell is recorded and the rest
/// continue. Every variant must differ from the first in exactly one
/// config key.
pub fn run_ablation(
    base: &ExperimentConfig,
    axis: AblationAxis,
    seeds: &[u64],
    train_ds: &Dataset,
    eval_ds: &Dataset,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed".to_string()));
    }
    let variants = axis.variants(base);
    for (name, cfg) in &variants[1..] {
        let diff = variants[0].1.diff(cfg);
        if diff.len() != 1 {
            return Err(Error::invalid(format!(
                "ablation axis {}: variant '{name}' differs from '{}' in {:?} (expected exactly one key)",
                axis.name(),
                variants[0].0,
                diff
            )));
        }
    }

    struct Job {
        variant: usize,
        seed: u64,
        config: ExperimentConfig,
    }
    let jobs: Vec<Job> = variants
        .iter()
        .enumerate()
        .flat_map(|(vi, (_, cfg))| {
            seeds.iter().map(move |&seed| Job { variant: vi, seed, config: cfg.clone() })
        })
        .collect();

    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; jobs.len()]);
    let next: Mutex<usize> = Mutex::new(0);
    let workers = thread_cap().min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job_index = {
                    let mut guard = next.lock().expect("job queue lock");
                    if *guard >= jobs.len() {
                        break;
                    }
                    let i = *guard;
                    *guard += 1;
                    i
                };
                let job = &jobs[job_index];
                let cell = run_cell(&job.config, job.seed, train_ds, eval_ds, out_dir);
                results.lock().expect("result lock")[job_index] = Some(cell);
            });
        }
    });
    let results = results.into_inner().expect("threads joined");

    let mut summaries = Vec::with_capacity(variants.len());
    for (vi, (name, cfg)) in variants.iter().enumerate() {
        let cells: Vec<CellResult> = jobs
            .iter()
            .zip(results.iter())
            .filter(|(job, _)| job.variant == vi)
            .map(|(_, cell)| cell.clone().expect("all jobs completed"))
            .collect();
        summaries.push(summarize_variant(name, &cfg.hash_hex(), cells));
    }
    Ok(AblationReport {
        axis: axis.name().to_string(),
        headline: axis.headline_metric().to_string(),
        seeds: seeds.to_vec(),
        variants: summaries,
    })
}

impl AblationReport {
    /// Per-seed headline difference of `variant` minus the first
    /// variant; only seeds where both cells succeeded contribute.
    pub fn paired_deltas(&self, variant: usize) -> Vec<(u64, f64)> {
        let first = &self.variants[0];
        let other = &self.variants[variant];
        let metric = &self.headline;
        self.seeds
            .iter()
            .filter_map(|&seed| {
                let a = first
                    .cells
                    .iter()
                    .find(|c| c.seed == seed)?
                    .rows
                    .as_ref()?
                    .get(metric)?;
                let b = other
                    .cells
                    .iter()
                    .find(|c| c.seed == seed)?
                    .rows
                    .as_ref()?
                    .get(metric)?;
                Some((seed, b - a))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut text = String::new();
        let _ = writeln!(text, "# ablation axis: {}", self.axis);
        let _ = writeln!(text, "# headline metric: {}", self.headline);
        let _ = writeln!(text, "# seeds: {:?}", self.seeds);
        for v in &self.variants {
            let _ = writeln!(text, "\nvariant {} config {}", v.name, v.config_hash);
            for cell in &v.cells {
                match (&cell.rows, &cell.error) {
                    (Some(rows), _) => {
                        let headline =
                            rows.get(&self.headline).copied().unwrap_or(f64::NAN);
                        let _ = writeln!(
                            text,
                            "  seed {}: {} = {headline}",
                            cell.seed, self.headline
                        );
                    }
                    (None, Some(err)) => {
                        let _ = writeln!(text, "  seed {}: FAILED ({err})", cell.seed);
                    }
                    (None, None) => unreachable!("cell has either rows or an error"),
                }
            }
            for (k, m) in &v.medians {
                let _ = writeln!(text, "  median {k} = {m}");
            }
        }
        let _ = writeln!(text, "\n# deltas vs {}", self.variants[0].name);
        for vi in 1..self.variants.len() {
            let deltas = self.paired_deltas(vi);
            let mut values: Vec<f64> = deltas.iter().map(|(_, d)| *d).collect();
            let med = median(&mut values);
            let pos = deltas.iter().filter(|(_, d)| *d > 0.0).count();
            let neg = deltas.iter().filter(|(_, d)| *d < 0.0).count();
            let _ = writeln!(
                text,
                "{}: median {} delta = {med:+.4} (signs +{pos}/-{neg} over {} paired seeds)",
                self.variants[vi].name,
                self.headline,
                deltas.len()
            );
        }
        text
    }
}
