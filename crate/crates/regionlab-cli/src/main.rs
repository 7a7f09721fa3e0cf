//! regionlab command-line interface.
//!
//! Subcommands: dataset, train, eval, ablate, gradcheck, plotdata.
//! Exit codes: 0 success, 1 usage error, 2 runtime failure,
//! 3 acceptance-check (gradcheck) failure.

use std::path::PathBuf;
use std::process::ExitCode;

use regionlab::config::ExperimentConfig;
use regionlab::harness::{
    ablate, build_datasets, emit_plot_data, evaluate_checkpoint, run_gradcheck, thread_cap,
    train_and_evaluate, AblationAxis, GradScope,
};

const USAGE: &str = "\
regionlab - desk-scale instance segmentation laboratory

USAGE:
    regionlab <COMMAND> [OPTIONS]

COMMANDS:
    dataset    build the train/eval synthetic datasets described by the config
    train      train one run and evaluate it on the held-out split
    eval       evaluate an existing checkpoint on its eval split
    ablate     train and evaluate every variant of one ablation axis
    gradcheck  verify analytic gradients against finite differences
    plotdata   emit tab-separated plot series from a run directory

OPTIONS:
    --config PATH      experiment config file (defaults apply when omitted)
    --seed N           run seed; repeatable for multi-seed commands
    --out DIR          output directory (default: runs)
    --force            allow overwriting an existing dataset
    --resume PATH      (train) continue from a checkpoint
    --checkpoint PATH  (eval) checkpoint to evaluate
    --axis NAME        (ablate) roiop | maskloss | branch | agnostic |
                       keypoint_roiop | multitask
    --scope NAME       (gradcheck) ops | losses | end2end | all
    --run DIR          (plotdata) directory holding logs and reports

ENVIRONMENT:
    REGIONLAB_THREADS  caps ablation cell parallelism
";

struct Options {
    command: String,
    config: Option<PathBuf>,
    seeds: Vec<u64>,
    out: PathBuf,
    force: bool,
    resume: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    axis: Option<String>,
    scope: Option<String>,
    run: Option<PathBuf>,
}

fn parse_args(args: &[String]) -> Result<Options, String> {
    let mut opts = Options {
        command: args.first().cloned().ok_or_else(|| "missing command".to_string())?,
        config: None,
        seeds: Vec::new(),
        out: PathBuf::from("runs"),
        force: false,
        resume: None,
        checkpoint: None,
        axis: None,
        scope: None,
        run: None,
    };
    let mut i = 1;
    let take_value = |i: &mut usize, flag: &str| -> Result<String, String> {
        *i += 1;
        args.get(*i).cloned().ok_or_else(|| format!("{flag} needs a value"))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => opts.config = Some(PathBuf::from(take_value(&mut i, "--config")?)),
            "--seed" => {
                let v = take_value(&mut i, "--seed")?;
                opts.seeds.push(v.parse().map_err(|_| format!("bad seed '{v}'"))?);
            }
            "--out" => opts.out = PathBuf::from(take_value(&mut i, "--out")?),
            "--force" => opts.force = true,
            "--resume" => opts.resume = Some(PathBuf::from(take_value(&mut i, "--resume")?)),
            "--checkpoint" => {
                opts.checkpoint = Some(PathBuf::from(take_value(&mut i, "--checkpoint")?))
            }
            "--axis" => opts.axis = Some(take_value(&mut i, "--axis")?),
            "--scope" => opts.scope = Some(take_value(&mut i, "--scope")?),
            "--run" => opts.run = Some(PathBuf::from(take_value(&mut i, "--run")?)),
            other => return Err(format!("unknown option '{other}'")),
        }
        i += 1;
    }
    Ok(opts)
}

fn load_config(opts: &Options) -> Result<ExperimentConfig, String> {
    match &opts.config {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config '{}': {e}", path.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| format!("config error: {e}"))
        }
    }
}

fn cmd_dataset(opts: &Options) -> Result<(), String> {
    let config = load_config(opts)?;
    let dir = PathBuf::from(&config.data_path);
    let summary =
        build_datasets(&config, &dir, opts.force).map_err(|e| e.to_string())?;
    println!("dataset written under {}", summary.dir.display());
    println!(
        "  train: {} scenes, blob hash {}",
        summary.train.count, summary.train.blob_hash
    );
    println!("  eval:  {} scenes, blob hash {}", summary.eval.count, summary.eval.blob_hash);
    Ok(())
}

fn cmd_train(opts: &Options) -> Result<(), String> {
    let config = load_config(opts)?;
    let seed = opts.seeds.first().copied().unwrap_or(config.seeds[0]);
    std::fs::create_dir_all(&opts.out).map_err(|e| e.to_string())?;
    let rows = train_and_evaluate(&config, seed, &opts.out, opts.resume.as_deref())
        .map_err(|e| e.to_string())?;
    println!("run {} seed {seed} complete; held-out metrics:", config.hash_hex());
    for (k, v) in &rows {
        if !k.contains("_t") {
            println!("  {k} = {v:.4}");
        }
    }
    Ok(())
}

fn cmd_eval(opts: &Options) -> Result<(), String> {
    let checkpoint = opts
        .checkpoint
        .as_ref()
        .ok_or_else(|| "--checkpoint is required for eval".to_string())?;
    let rows = evaluate_checkpoint(checkpoint, &opts.out).map_err(|e| e.to_string())?;
    println!("evaluation of {}:", checkpoint.display());
    for (k, v) in &rows {
        if !k.contains("_t") {
            println!("  {k} = {v:.4}");
        }
    }
    Ok(())
}

fn cmd_ablate(opts: &Options) -> Result<(), String> {
    let config = load_config(opts)?;
    let axis_name = opts.axis.as_ref().ok_or_else(|| "--axis is required".to_string())?;
    let axis = AblationAxis::parse(axis_name).map_err(|e| e.to_string())?;
    let seeds = if opts.seeds.is_empty() { config.seeds.clone() } else { opts.seeds.clone() };
    if seeds.len() < 3 {
        return Err(format!("ablation needs at least 3 seeds, got {}", seeds.len()));
    }
    println!(
        "ablating axis '{}' over {} seeds with {} worker thread(s)",
        axis.name(),
        seeds.len(),
        thread_cap()
    );
    let report = ablate(&config, axis, &seeds, &opts.out).map_err(|e| e.to_string())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_gradcheck(opts: &Options) -> Result<bool, String> {
    let scope = opts.scope.clone().unwrap_or_else(|| "all".to_string());
    let scopes: Vec<GradScope> = match scope.as_str() {
        "all" => vec![GradScope::Ops, GradScope::Losses, GradScope::EndToEnd],
        other => vec![GradScope::parse(other).map_err(|e| e.to_string())?],
    };
    let mut all_pass = true;
    println!(
        "{:<44} {:>12} {:>9} {:>9} {:>9}  result",
        "check", "max_rel_err", "tol", "checked", "excluded"
    );
    for scope in scopes {
        let rows = run_gradcheck(scope).map_err(|e| e.to_string())?;
        for row in rows {
            println!(
                "{:<44} {:>12.3e} {:>9.0e} {:>9} {:>9}  {}",
                row.name,
                row.max_rel_err,
                row.tolerance,
                row.checked,
                row.excluded,
                if row.pass { "PASS" } else { "FAIL" }
            );
            all_pass &= row.pass;
        }
    }
    Ok(all_pass)
}

fn cmd_plotdata(opts: &Options) -> Result<(), String> {
    let run = opts.run.clone().unwrap_or_else(|| opts.out.clone());
    let emitted = emit_plot_data(&run, &opts.out).map_err(|e| e.to_string())?;
    for path in &emitted {
        println!("{}", path.display());
    }
    if emitted.is_empty() {
        println!("no logs or reports found under {}", run.display());
    }
    Ok(())
}

fn dispatch(opts: &Options) -> Result<u8, String> {
    match opts.command.as_str() {
        "dataset" => cmd_dataset(opts).map(|()| 0),
        "train" => cmd_train(opts).map(|()| 0),
        "eval" => cmd_eval(opts).map(|()| 0),
        "ablate" => cmd_ablate(opts).map(|()| 0),
        "gradcheck" => cmd_gradcheck(opts).map(|pass| if pass { 0 } else { 3 }),
        "plotdata" => cmd_plotdata(opts).map(|()| 0),
        other => Err(format!("unknown command '{other}'")),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        return ExitCode::from(if args.is_empty() { 1 } else { 0 });
    }
    let opts = match parse_args(&args) {
        Ok(opts) => opts,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            eprint!("{USAGE}");
            return ExitCode::from(1);
        }
    };
    if !matches!(
        opts.command.as_str(),
        "dataset" | "train" | "eval" | "ablate" | "gradcheck" | "plotdata"
    ) {
        eprintln!("usage error: unknown command '{}'", opts.command);
        return ExitCode::from(1);
    }
    match dispatch(&opts) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
