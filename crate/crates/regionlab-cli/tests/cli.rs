//! End-to-end CLI checks: exit codes, dataset guard rails, and the
//! train/eval/plotdata flow on a miniature config.

use std::path::Path;
use std::process::Command;

fn regionlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regionlab"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let text = format!(
        "[dataset]\n\
         path = {}\n\
         image_h = 32\n\
         image_w = 32\n\
         min_size = 10\n\
         max_size = 16\n\
         train_scenes = 8\n\
         eval_scenes = 4\n\
         [backbone]\n\
         stride = 4\n\
         widths = 4,8\n\
         [roi]\n\
         box_resolution = 4\n\
         [heads]\n\
         channel_width = 8\n\
         mlp_hidden = 16\n\
         mask_resolution = 8\n\
         [train]\n\
         iterations = 10\n\
         lr_drop_at = 8\n\
         rois_per_image = 8\n",
        data.display()
    );
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = regionlab().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_command_and_bad_flags_exit_one() {
    let out = regionlab().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = regionlab().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage error"));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = regionlab().args(["train", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset"));
}

#[test]
fn dataset_train_eval_plotdata_flow() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());

    let out = regionlab().args(["dataset", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("blob hash"));

    // identical flags twice: refused without --force, identical hash with
    let again = regionlab().args(["dataset", "--config"]).arg(&config).output().unwrap();
    assert_eq!(again.status.code(), Some(2));
    let forced = regionlab()
        .args(["dataset", "--force", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(stdout, String::from_utf8_lossy(&forced.stdout));

    let runs = dir.path().join("runs");
    let out = regionlab()
        .args(["train", "--seed", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&runs)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mask_ap"));

    let ckpt = std::fs::read_dir(&runs)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().ends_with("-final.ckpt"))
        .expect("final checkpoint written")
        .path();
    let out = regionlab()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(dir.path().join("evalout"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let plots = dir.path().join("plots");
    let out = regionlab()
        .args(["plotdata", "--run"])
        .arg(&runs)
        .arg("--out")
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let emitted: Vec<_> = std::fs::read_dir(&plots).unwrap().collect();
    assert!(!emitted.is_empty(), "plotdata emitted series files");
}

#[test]
fn gradcheck_losses_scope_exits_zero() {
    let out = regionlab().args(["gradcheck", "--scope", "losses"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn ablate_requires_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = regionlab()
        .args(["ablate", "--axis", "maskloss", "--seed", "1", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 seeds"));
}
