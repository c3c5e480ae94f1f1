//! Runs the retrieval and placement benchmarks on a prepared dataset with
//! trained models and prints the tables.
//!
//! cargo run --release --example evaluate_models -- DATA_DIR MODEL_DIR

use std::path::PathBuf;

use partforge::dataset::Dataset;
use partforge::eval::{evaluate, EvalConfig};
use partforge::retrieval::Models;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let data: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partforge-prep"));
    let model_dir: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partforge-models"));

    let ds = Dataset::load(&data)?;
    let models = Models::load(&model_dir)?;
    let report = evaluate(&models, &ds.train(), &ds.test(), &EvalConfig::default())?;
    for n in &report.notes {
        println!("# {n}");
    }
    println!();
    print!("{}", report.to_table());
    Ok(())
}
