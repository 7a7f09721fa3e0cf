use regionlab::config::ExperimentConfig;
use regionlab::harness::{evaluate_model, open_split};
use regionlab::pipeline::train;
use std::time::Instant;

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let config = ExperimentConfig::parse(&text).unwrap();
    let t = Instant::now();
    let train_ds = open_split(&config, "train").unwrap();
    let eval_ds = open_split(&config, "eval").unwrap();
    println!("open: {:?}", t.elapsed());
    let t = Instant::now();
    let artifacts = train(&config, 7, &train_ds, None).unwrap();
    println!("train {} iters: {:?}", config.iterations, t.elapsed());
    let t = Instant::now();
    let out = evaluate_model(&artifacts.model, &eval_ds).unwrap();
    println!("eval {} scenes: {:?}", eval_ds.len(), t.elapsed());
    for (k, v) in &out.rows {
        if !k.contains("_t") {
            println!("  {k} = {v:.4}");
        }
    }
}
