//! Command-layer functions behind the CLI: dataset builds, training
//! runs, evaluation, the ablation matrix, gradient-check suites, and
//! plot-data emission. Everything is reproducible from (config, seed).

mod ablate;
mod evalrun;
mod gradcheck;
mod plotdata;

pub use ablate::{
    median, run_ablation, thread_cap, AblationAxis, AblationReport, CellResult, VariantSummary,
};
pub use evalrun::{
    evaluate_model, read_report, write_detections, write_report, EvalOutcome, PCK_RADIUS_CELLS,
};
pub use gradcheck::{run_gradcheck, GradCheckRow, GradScope, END2END_FD_STEP, END2END_REL_TOL};
pub use plotdata::emit_plot_data;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::pipeline::{infer, load_checkpoint, resume_train, run_tag, train, Model};
use crate::synth::{read_dataset, write_dataset, Dataset, DatasetMeta};

pub const TRAIN_SPLIT: &str = "train";
pub const EVAL_SPLIT: &str = "eval";

/// Eval scenes draw from a disjoint index range of the generator stream.
pub const EVAL_SPLIT_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub train: DatasetMeta,
    pub eval: DatasetMeta,
}

/// Write the train and eval splits described by the config. Refuses to
/// overwrite an existing dataset unless `force` is set.
pub fn build_datasets(config: &ExperimentConfig, dir: &Path, force: bool) -> Result<DatasetSummary> {
    config.validate()?;
    for split in [TRAIN_SPLIT, EVAL_SPLIT] {
        let manifest = dir.join(format!("{split}.manifest"));
        if manifest.exists() && !force {
            return Err(Error::invalid(format!(
                "dataset '{}' already exists (pass --force to overwrite)",
                manifest.display()
            )));
        }
    }
    let train_meta = write_dataset(dir, TRAIN_SPLIT, &config.scene, config.train_scenes, 0)?;
    let eval_meta =
        write_dataset(dir, EVAL_SPLIT, &config.scene, config.eval_scenes, EVAL_SPLIT_OFFSET)?;
    Ok(DatasetSummary { dir: dir.to_path_buf(), train: train_meta, eval: eval_meta })
}

/// Open one split, checking that it matches the config's scene spec and
/// scene count (stale datasets are rejected, not silently reused).
pub fn open_split(config: &ExperimentConfig, split: &str) -> Result<Dataset> {
    let dir = PathBuf::from(&config.data_path);
    let dataset = read_dataset(&dir, split).map_err(|e| {
        Error::invalid(format!(
            "cannot open dataset split '{split}' under '{}' (build it with the dataset command): {e}",
            dir.display()
        ))
    })?;
    if dataset.meta.spec != config.scene {
        return Err(Error::invalid(format!(
            "dataset split '{split}' was generated from a different scene spec; rebuild it"
        )));
    }
    let expected = match split {
        TRAIN_SPLIT => config.train_scenes,
        _ => config.eval_scenes,
    };
    if dataset.len() != expected {
        return Err(Error::invalid(format!(
            "dataset split '{split}' has {} scenes, config expects {expected}; rebuild it",
            dataset.len()
        )));
    }
    Ok(dataset)
}

/// Train one (config, seed) run, writing the log and checkpoints under
/// `out_dir`, then evaluate on the eval split and write the report.
pub fn train_and_evaluate(
    config: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<BTreeMap<String, f64>> {
    let train_ds = open_split(config, TRAIN_SPLIT)?;
    let eval_ds = open_split(config, EVAL_SPLIT)?;
    let artifacts = match resume_from {
        Some(ckpt) => resume_train(config, seed, &train_ds, ckpt, Some(out_dir))?,
        None => train(config, seed, &train_ds, Some(out_dir))?,
    };
    let rows = evaluate_model(&artifacts.model, &eval_ds)?.rows;
    let report = out_dir.join(format!("{}-report.txt", run_tag(config, seed)));
    write_report(&report, &rows, &config.hash_hex(), seed)?;
    Ok(rows)
}

/// Rebuild a model from a checkpoint (the config echo inside it) and
/// evaluate it against the eval split of that config. Writes the metric
/// report plus the serialized per-scene detections.
pub fn evaluate_checkpoint(checkpoint: &Path, out_dir: &Path) -> Result<BTreeMap<String, f64>> {
    let state = load_checkpoint(checkpoint)?;
    let config = ExperimentConfig::parse(&state.config_text)?;
    let mut model = Model::new(&config, 0)?;
    state.apply_to(&mut model)?;
    let eval_ds = open_split(&config, EVAL_SPLIT)?;
    let rows = evaluate_model(&model, &eval_ds)?.rows;
    std::fs::create_dir_all(out_dir)?;
    let stem = checkpoint.file_stem().unwrap_or_default().to_string_lossy();
    let report = out_dir.join(format!("{stem}-report.txt"));
    write_report(&report, &rows, &config.hash_hex(), config.seeds[0])?;

    let mut per_scene = Vec::with_capacity(eval_ds.len());
    for i in 0..eval_ds.len() {
        let scene = eval_ds.scene(i)?;
        let index = eval_ds.meta.start_index + i as u64;
        per_scene.push((index, infer(&model, &scene, index)?));
    }
    write_detections(&out_dir.join(format!("{stem}-detections.txt")), &per_scene)?;
    Ok(rows)
}

/// Evaluate ground truth fed back as detections: a sanity oracle that
/// must score 1.0 everywhere.
pub fn evaluate_ground_truth_as_detections(config: &ExperimentConfig) -> Result<BTreeMap<String, f64>> {
    use crate::eval::{summarize, EvalConfig, EvalDetection, EvalGroundTruth, EvalImage, IouKind};
    let eval_ds = open_split(config, EVAL_SPLIT)?;
    let mut images = Vec::with_capacity(eval_ds.len());
    for i in 0..eval_ds.len() {
        let scene = eval_ds.scene(i)?;
        let detections = scene
            .annotations
            .iter()
            .map(|a| EvalDetection {
                class: a.class,
                score: 1.0,
                bbox: a.bbox,
                mask: Some(a.mask.clone()),
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
    for (kind, prefix) in [(IouKind::Mask, "mask"), (IouKind::Box, "box")] {
        let report = summarize(
            &images,
            &EvalConfig {
                iou_thresholds: config.iou_thresholds.clone(),
                iou_kind: kind,
                max_detections_per_image: config.max_detections,
            },
        )?;
        rows.extend(report.rows(prefix));
    }
    Ok(rows)
}

/// Run the full ablation for an axis using the config's dataset.
pub fn ablate(
    config: &ExperimentConfig,
    axis: AblationAxis,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationReport> {
    let train_ds = open_split(config, TRAIN_SPLIT)?;
    let eval_ds = open_split(config, EVAL_SPLIT)?;
    std::fs::create_dir_all(out_dir)?;
    let report = run_ablation(config, axis, seeds, &train_ds, &eval_ds, Some(out_dir))?;
    let path = out_dir.join(format!("ablation-{}-{}.txt", axis.name(), config.hash_hex()));
    std::fs::write(&path, report.to_text())?;
    Ok(report)
}

/// Quick inference over the first few eval scenes; returns detection
/// counts per scene (a smoke-level check used by the CLI).
pub fn infer_sample(config: &ExperimentConfig, checkpoint: &Path, scenes: usize) -> Result<Vec<usize>> {
    let state = load_checkpoint(checkpoint)?;
    let ckpt_config = ExperimentConfig::parse(&state.config_text)?;
    let mut model = Model::new(&ckpt_config, 0)?;
    state.apply_to(&mut model)?;
    let eval_ds = open_split(&ckpt_config, EVAL_SPLIT)?;
    let mut counts = Vec::new();
    for i in 0..scenes.min(eval_ds.len()) {
        let scene = eval_ds.scene(i)?;
        let results = infer(&model, &scene, eval_ds.meta.start_index + i as u64)?;
        counts.push(results.len());
    }
    let _ = config;
    Ok(counts)
}
