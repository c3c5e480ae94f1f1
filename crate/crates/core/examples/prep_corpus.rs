//! Generates the synthetic furniture corpus, preprocesses it and prints the
//! component-count histogram.
//!
//! cargo run --release --example prep_corpus -- [shapes_per_category] [out_dir]

use std::path::PathBuf;

use partforge::dataset::corpus::{generate_corpus, CorpusConfig};
use partforge::dataset::{export_dataset, prepare_corpus, PrepConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_category = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40);
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partforge-prep"));

    let corpus = generate_corpus(&CorpusConfig {
        shapes_per_category: per_category,
        ..CorpusConfig::default()
    });
    let cfg = PrepConfig::default();
    let (graphs, warnings) = prepare_corpus(&corpus, &cfg, 1);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let merges = graphs.iter().fold([0usize; 4], |mut acc, g| {
        acc[0] += g.merge_stats.size_merges;
        acc[1] += g.merge_stats.overlap_merges;
        acc[2] += g.merge_stats.duplicate_merges;
        acc[3] += g.merge_stats.isolated_small;
        acc
    });
    let manifest = export_dataset(graphs, &cfg, 0.8, 1, &out)?;
    println!("wrote {}", out.display());
    println!(
        "merges: size {} overlap {} duplicate {} (isolated small {})",
        merges[0], merges[1], merges[2], merges[3]
    );
    for (category, hist) in &manifest.stats.admitted {
        let row: Vec<String> = hist.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        println!("{category:>8} admitted  {}", row.join(" "));
    }
    for (category, hist) in &manifest.stats.discarded {
        let row: Vec<String> = hist.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        println!("{category:>8} discarded {}", row.join(" "));
    }
    let mut labels = std::collections::BTreeMap::<String, usize>::new();
    for s in &manifest.shapes {
        for c in &s.components {
            *labels
                .entry(format!("{}/{}", s.category, c.part_label.as_deref().unwrap_or("-")))
                .or_default() += 1;
        }
    }
    println!("labels: {labels:?}");
    Ok(())
}
