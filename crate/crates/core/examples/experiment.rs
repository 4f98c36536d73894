//! Runs the in-memory experiment and prints the summary and reports.
//! `cargo run --release --example experiment -- [smoke|default|<config.toml>] [seed]`

use std::time::Instant;

use shoprank::pipeline::{Experiment, ExperimentConfig};

fn main() -> shoprank::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1).map(String::as_str) {
        Some("smoke") => ExperimentConfig::smoke(),
        Some("default") | None => ExperimentConfig::default(),
        Some(path) => ExperimentConfig::load(path)?,
    };
    if let Some(s) = args.get(2) {
        cfg.seed = s.parse().expect("seed");
    }
    let t = Instant::now();
    let mut e = Experiment::prepare(cfg)?;
    eprintln!("prepared in {:.1?}", t.elapsed());
    eprintln!("{}", serde_json::to_string_pretty(&e.segmentation.report).unwrap());
    eprintln!("{:?}", e.featurize_report);
    e.train_and_evaluate()?;
    eprintln!("total {:.1?}", t.elapsed());
    println!("{}", e.summary.to_text());
    println!("{}", e.reports.to_text());
    Ok(())
}
