use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use partforge::dataset::corpus::{generate_corpus, CorpusConfig};
use partforge::dataset::{
    export_dataset, load_raw_corpus, prepare_corpus, write_raw_shape, ContactGraph, Dataset, PrepConfig, RawShape,
};
use partforge::eval::{evaluate, EvalConfig, Metric};
use partforge::nn::NetConfig;
use partforge::retrieval::{
    auto_assemble_tree, write_trajectory, EmbeddingIndex, Models, PlacedPart, SuggestMode, SynthConfig,
};
use partforge::seed::rng_for;
use partforge::train::{train_joint, train_placement, TrainConfig};
use partforge_service::{router, AppState, Catalog};
use rand::Rng;

#[derive(Parser)]
#[command(name = "partforge", version, about = "Learned part suggestion for 3D assembly")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic furniture corpus as raw shape folders.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        per_category: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Build contact graphs, merge components and write a dataset.
    Prep {
        /// Folder of raw shapes; omit to prepare the synthetic corpus directly.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Shapes per category when generating the synthetic corpus.
        #[arg(long, default_value_t = 200)]
        synthetic: usize,
        #[arg(long, default_value_t = 0.05)]
        tau_proximity: f64,
        #[arg(long, default_value_t = 0.2)]
        tau_size: f64,
        #[arg(long, default_value_t = 0.05)]
        tau_hausdorff: f64,
        #[arg(long, default_value_t = 8)]
        max_cc: usize,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
    },
    /// Train the embedding and retrieval networks, the placement network, or both.
    Train {
        #[arg(value_enum)]
        which: Which,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 50)]
        checkpoint_every: usize,
        #[arg(long, value_enum, default_value_t = Net::Compact)]
        net: Net,
    },
    /// Run the retrieval and placement benchmarks.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::All)]
        metric: MetricArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grow an assembly automatically from one component.
    Synth {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start component key (`shape/component`); random when omitted.
        #[arg(long)]
        seed_component: Option<String>,
        #[arg(long, default_value = "chair")]
        category: String,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Max)]
        mode: ModeArg,
        /// Expand the best `branch` candidates at every step instead of one.
        #[arg(long)]
        branch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Joint,
    Placement,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Net {
    Compact,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Functional,
    Geometric,
    Style,
    Placement,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sample,
    Max,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Corpus {
            out,
            per_category,
            seed,
        } => corpus(&out, per_category, seed),
        Command::Prep {
            input,
            out,
            seed,
            synthetic,
            tau_proximity,
            tau_size,
            tau_hausdorff,
            max_cc,
            split,
        } => {
            let cfg = PrepConfig {
                tau_proximity,
                tau_size,
                tau_hausdorff,
                max_cc,
                ..PrepConfig::default()
            };
            let shapes = match input {
                Some(dir) => load_raw_corpus(&dir).with_context(|| format!("reading {}", dir.display()))?,
                None => synthetic_corpus(synthetic, 7),
            };
            prep(&shapes, &cfg, seed, split, &out)
        }
        Command::Train {
            which,
            data,
            out,
            epochs,
            max_steps,
            seed,
            batch,
            checkpoint_every,
            net,
        } => {
            let cfg = TrainConfig {
                epochs,
                max_steps,
                seed,
                batch,
                checkpoint_every,
                ..TrainConfig::default()
            };
            let net = match net {
                Net::Compact => NetConfig::compact(),
                Net::Full => NetConfig::default(),
            };
            train(which, &data, &out, &net, &cfg)
        }
        Command::Eval {
            data,
            model,
            metric,
            out,
            k,
            seed,
        } => eval(&data, &model, metric, out.as_deref(), k, seed),
        Command::Synth {
            models,
            data,
            out,
            seed_component,
            category,
            steps,
            mode,
            branch,
            rng_seed,
        } => {
            let cfg = SynthConfig {
                max_steps: steps,
                mode: match mode {
                    ModeArg::Sample => SuggestMode::Sample,
                    ModeArg::Max => SuggestMode::Max,
                },
                ..SynthConfig::default()
            };
            synth(&models, &data, &out, seed_component, &category, &cfg, branch, rng_seed)
        }
        Command::Serve {
            models,
            data,
            port,
            host,
        } => serve(&models, &data, &host, port),
    }
}

fn synthetic_corpus(per_category: usize, seed: u64) -> Vec<RawShape> {
    generate_corpus(&CorpusConfig {
        shapes_per_category: per_category,
        seed,
        ..CorpusConfig::default()
    })
}

fn corpus(out: &Path, per_category: usize, seed: u64) -> anyhow::Result<()> {
    let shapes = synthetic_corpus(per_category, seed);
    for s in &shapes {
        write_raw_shape(&out.join(&s.shape_id), s)?;
    }
    println!("wrote {} shapes to {}", shapes.len(), out.display());
    Ok(())
}

fn prep(shapes: &[RawShape], cfg: &PrepConfig, seed: u64, split: f64, out: &Path) -> anyhow::Result<()> {
    let (graphs, warnings) = prepare_corpus(shapes, cfg, seed);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let manifest = export_dataset(graphs, cfg, split, seed, out)?;
    println!("wrote {}", out.display());
    for (category, hist) in &manifest.stats.admitted {
        let row: Vec<String> = hist.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        println!("{category:>8} admitted  {}", row.join(" "));
    }
    for (category, hist) in &manifest.stats.discarded {
        let row: Vec<String> = hist.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        println!("{category:>8} discarded {}", row.join(" "));
    }
    Ok(())
}

fn train(which: Which, data: &Path, out: &Path, net: &NetConfig, cfg: &TrainConfig) -> anyhow::Result<()> {
    let ds = Dataset::load(data).with_context(|| format!("loading {}", data.display()))?;
    let mut net = net.clone();
    net.n_points = net.n_points.min(ds.manifest.config.n_points);
    let graphs = ds.train();
    let progress = |name: &'static str| {
        move |r: &partforge::train::EpochRecord| {
            if r.epoch % 10 == 0 {
                match r.error {
                    Some(e) => println!(
                        "{name} epoch {:5} step {:7} loss {:.4} error {:.4}",
                        r.epoch, r.step, r.loss, e
                    ),
                    None => println!("{name} epoch {:5} step {:7} loss {:.4}", r.epoch, r.step, r.loss),
                }
            }
        }
    };
    if matches!(which, Which::Joint | Which::Both) {
        let o = train_joint(&graphs, &net, cfg, Some(out), progress("joint"))?;
        for w in &o.log.warnings {
            eprintln!("warning: {w}");
        }
    }
    if matches!(which, Which::Placement | Which::Both) {
        train_placement(&graphs, &net, cfg, Some(out), progress("placement"))?;
    }
    Ok(())
}

fn eval(data: &Path, model: &Path, metric: MetricArg, out: Option<&Path>, k: usize, seed: u64) -> anyhow::Result<()> {
    let models = Models::load(model)?;
    let ds = Dataset::load(data)?;
    let metrics: BTreeSet<Metric> = match metric {
        MetricArg::Functional => [Metric::Functional].into(),
        MetricArg::Geometric => [Metric::Geometric].into(),
        MetricArg::Style => [Metric::Style].into(),
        MetricArg::Placement => [Metric::Placement].into(),
        MetricArg::All => Metric::ALL.into_iter().collect(),
    };
    let cfg = EvalConfig {
        k,
        seed,
        metrics,
        ..EvalConfig::default()
    };
    let report = evaluate(&models, &ds.train(), &ds.test(), &cfg)?;
    for n in &report.notes {
        println!("# {n}");
    }
    print!("{}", report.to_table());
    if let Some(path) = out {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        std::fs::write(path, json)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    models: &Path,
    data: &Path,
    out: &Path,
    seed_component: Option<String>,
    category: &str,
    cfg: &SynthConfig,
    branch: Option<usize>,
    rng_seed: u64,
) -> anyhow::Result<()> {
    let models = Models::load(models)?;
    let ds = Dataset::load(data)?;
    let graphs: Vec<&ContactGraph> = ds.graphs.iter().filter(|g| g.category == category).collect();
    if graphs.is_empty() {
        bail!("no shapes of category `{category}`");
    }
    let index = EmbeddingIndex::build(&models.f, graphs.iter().copied(), |_| true)?;
    let entry = match seed_component {
        Some(key) => index
            .position(&key)
            .with_context(|| format!("`{key}` is not a {category} component"))?,
        None => rng_for(rng_seed, &["synth-seed"]).random_range(0..index.len()),
    };
    let seed = PlacedPart::at_origin_of(&index.entry(entry).component);
    println!("seed {}", seed.key());
    match branch {
        None => {
            let t = write_trajectory(out, &models, &index, seed, cfg, rng_seed)?;
            for (i, s) in t.steps.iter().enumerate() {
                println!("{:2} {:<28} log-score {:9.2}", i + 1, s.key, s.log_score);
            }
            println!("stopped: {:?}; wrote {}", t.stop, out.display());
        }
        Some(b) => {
            let tree = auto_assemble_tree(&models, &index, seed, cfg, b, rng_seed)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("tree.json"), serde_json::to_string_pretty(&tree)?)?;
            println!("{} nodes, depth {}; wrote {}", tree.size(), tree.depth(), out.display());
        }
    }
    Ok(())
}

fn serve(models: &Path, data: &Path, host: &str, port: u16) -> anyhow::Result<()> {
    let catalog = Catalog::load(models, data)?;
    println!(
        "loaded {} components in {} categories",
        catalog.len(),
        catalog.categories().len()
    );
    let addr: SocketAddr = format!("{host}:{port}").parse()?;
    let app = router(AppState::new(catalog));
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
