//! Trains the embedding, retrieval and placement networks on a prepared
//! dataset (see `prep_corpus`) with the compact network configuration.
//!
//! cargo run --release --example train_models -- DATA_DIR OUT_DIR [epochs] [joint|placement|both] [checkpoint_every]

use std::path::PathBuf;

use partforge::dataset::Dataset;
use partforge::nn::NetConfig;
use partforge::train::{train_joint, train_placement, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let data: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partforge-prep"));
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partforge-models"));
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let which = args.next().unwrap_or_else(|| "both".into());
    let checkpoint_every = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let ds = Dataset::load(&data)?;
    let train = ds.train();
    println!("{} training shapes", train.len());
    let net = NetConfig::compact();
    let cfg = TrainConfig {
        epochs,
        checkpoint_every,
        ..TrainConfig::default()
    };
    std::fs::create_dir_all(&out)?;
    if which != "placement" {
        let joint = train_joint(&train, &net, &cfg, Some(&out), |r| {
            println!(
                "joint epoch {:4} step {:6} lr {:.2e} loss {:.4}",
                r.epoch, r.step, r.lr, r.loss
            )
        })?;
        let ms: u64 = joint.log.timing.iter().map(|t| t.wall_ms).sum();
        println!("joint: {:.1} s", ms as f64 / 1e3);
    }
    if which != "joint" {
        let placement = train_placement(&train, &net, &cfg, Some(&out), |r| {
            println!(
                "placement epoch {:4} loss {:.5} error {:.4}",
                r.epoch,
                r.loss,
                r.error.unwrap_or(f64::NAN)
            )
        })?;
        let ms: u64 = placement.log.timing.iter().map(|t| t.wall_ms).sum();
        println!("placement: {:.1} s", ms as f64 / 1e3);
    }
    println!("models in {}", out.display());
    Ok(())
}
