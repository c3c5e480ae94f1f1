//! Suggests complements for one component of a test shape, then grows a
//! full assembly from it and writes the trajectory as .xyz point dumps.
//!
//! cargo run --release --example auto_assemble -- DATA_DIR MODEL_DIR [OUT_DIR] [test_shape_index]

use std::collections::BTreeSet;
use std::path::PathBuf;

use partforge::dataset::Dataset;
use partforge::retrieval::{
    suggest, write_trajectory, Assembly, EmbeddingIndex, Models, PlacedPart, SuggestConfig, SynthConfig,
};
use partforge::seed::rng_for;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = std::env::temp_dir();
    let data: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.join("partforge-prep"));
    let model_dir: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.join("partforge-models"));
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.join("partforge-synth"));
    let which: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let ds = Dataset::load(&data)?;
    let models = Models::load(&model_dir)?;
    let test = ds.test();
    let shape = test
        .get(which)
        .ok_or_else(|| anyhow::anyhow!("only {} test shapes", test.len()))?;
    let pool: Vec<_> = ds.graphs.iter().filter(|g| g.category == shape.category).collect();
    let index = EmbeddingIndex::build(&models.f, pool.iter().copied(), |_| true)?;
    let seed = PlacedPart::at_origin_of(&shape.nodes[0]);
    println!("{} ({}), seed {}", shape.shape_id, shape.category, seed.key());

    let asm = Assembly::new(seed.clone(), 0);
    let mut rng = rng_for(0, &["example"]);
    let set = suggest(
        &models.g,
        Some(&models.h),
        &index,
        &asm,
        &SuggestConfig::default(),
        &mut rng,
    )?;
    println!("suggestions:");
    for s in &set.items {
        let label = index.entry(s.entry).component.part_label.clone().unwrap_or_default();
        let p = s.placement.unwrap_or_default();
        println!(
            "  {:<36} {:<8} log-score {:9.2}  at ({:+.2}, {:+.2}, {:+.2})",
            s.key, label, s.log_score, p[0], p[1], p[2]
        );
    }

    let cfg = SynthConfig {
        max_steps: shape.nodes.len() - 1,
        ..SynthConfig::default()
    };
    let traj = write_trajectory(&out, &models, &index, seed, &cfg, 0)?;
    println!("auto-assembly ({:?}):", traj.stop);
    for s in &traj.steps {
        println!("  + {:<36} log-score {:9.2}", s.key, s.log_score);
    }
    let truth: BTreeSet<String> = shape.nodes[1..].iter().map(|n| n.key()).collect();
    let same = traj.added_keys().iter().filter(|k| truth.contains(**k)).count();
    println!(
        "{same}/{} added parts come from the original shape; wrote {}",
        truth.len(),
        out.display()
    );
    Ok(())
}
