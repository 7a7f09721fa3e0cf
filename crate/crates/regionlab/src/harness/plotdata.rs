//! Plot-data emission: tab-separated series files derived from run
//! outputs, named deterministically after their source files (which
//! carry the config hash).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

use super::evalrun::read_report;

/// Loss-curve series from a training log: iteration, total, and the
/// per-task components.
fn loss_series(log_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(log_path)?;
    let mut out = String::from("iteration\ttotal\tcls\tbox\tmask\tkeypoint\n");
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() >= 7 {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                fields[0], fields[2], fields[3], fields[4], fields[5], fields[6]
            );
        }
    }
    let stem = log_path.file_stem().unwrap_or_default().to_string_lossy();
    let path = out_dir.join(format!("{stem}-losscurve.tsv"));
    std::fs::write(&path, out)?;
    Ok(path)
}

/// AP-versus-IoU-threshold series from a metric report, per task.
fn ap_series(report_path: &Path, out_dir: &Path) -> Result<Option<PathBuf>> {
    let rows = read_report(report_path)?;
    let mut out = String::from("iou_threshold\ttask\tap\n");
    let mut any = false;
    for (key, value) in &rows {
        for task in ["mask", "box"] {
            if let Some(t) = key.strip_prefix(&format!("{task}_ap_t")) {
                if let Ok(pct) = t.parse::<u32>() {
                    let _ = writeln!(out, "{}\t{task}\t{value}", pct as f64 / 100.0);
                    any = true;
                }
            }
        }
    }
    if !any {
        return Ok(None);
    }
    let stem = report_path.file_stem().unwrap_or_default().to_string_lossy();
    let path = out_dir.join(format!("{stem}-ap_vs_iou.tsv"));
    std::fs::write(&path, out)?;
    Ok(Some(path))
}

/// Scan a run directory for training logs and metric reports and emit
/// one series file per input. Returns the emitted paths in sorted order.
pub fn emit_plot_data(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    inputs.sort();
    let mut emitted = Vec::new();
    for path in inputs {
        let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
        if name.ends_with(".log") {
            emitted.push(loss_series(&path, out_dir)?);
        } else if name.ends_with("-report.txt") {
            if let Some(p) = ap_series(&path, out_dir)? {
                emitted.push(p);
            }
        }
    }
    Ok(emitted)
}
