//! Joint training of the embedding and retrieval networks, and separate
//! training of the placement network.
//!
//! Both loops share the triplet stream: for the same seed the `(X, Y)`
//! pairs seen by the placement network are exactly those seen by the joint
//! loop. Per-triplet gradients are computed in parallel and summed in batch
//! order, so results do not depend on the thread count.

mod sampler;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use partforge_autodiff::{
    adam_step, exponential_decay, AdamConfig, AdamError, AdamState, ParamSet, Tape, Tensor, TensorError,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ContactGraph;
use crate::losses::{contrastive_tape, gmm_nll_tape, placement_loss_tape, MARGIN};
use crate::nn::{cloud_tensor, EmbeddingNet, NetConfig, NetError, PlacementNet, RetrievalNet};
use crate::seed::{derive_seed, rng_for};

pub use sampler::{
    component_input, frontier, grow_subgraph, ComponentRef, NegativePolicy, SamplerError, TrainingTriplet,
    TripletSampler, MAX_ATTEMPTS,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trainable shapes (need at least 2 components and one contact)")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: u64,
        reason: String,
        /// Checkpoint of the last finite parameters, when an output dir was given.
        last_good: Option<PathBuf>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optional cap on optimizer steps; whichever limit is hit first stops.
    pub max_steps: Option<u64>,
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_steps: u64,
    pub margin: f64,
    pub seed: u64,
    /// Epochs between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub negatives: NegativePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            max_steps: None,
            batch: 32,
            lr0: 1e-3,
            decay: 0.8,
            decay_steps: 50_000,
            margin: MARGIN,
            seed: 0,
            checkpoint_every: 50,
            negatives: NegativePolicy::Complement,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 || self.batch == 0 || self.decay_steps == 0 {
            return bad("epochs, batch and decay_steps must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.decay > 0.0) || !(self.margin >= 0.0) {
            return bad("lr0 and decay must be positive, margin non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect for optimizer step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        exponential_decay(self.lr0, self.decay, self.decay_steps, step)
    }
}

/// One line of the training log. Wall time is kept out of it so logs of
/// identical runs compare equal byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    /// Learning rate of the last step.
    pub lr: f64,
    /// Mean per-triplet loss.
    pub loss: f64,
    /// Mean Euclidean placement error (placement training only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub timing: Vec<EpochTiming>,
    /// Shapes left out of training and why.
    pub warnings: Vec<String>,
}

impl TrainLog {
    /// The records as line-delimited JSON.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("plain data"));
            s.push('\n');
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub f: EmbeddingNet,
    pub g: RetrievalNet,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct PlacementOutcome {
    pub h: PlacementNet,
    pub log: TrainLog,
}

/// Graphs a triplet can be drawn from, plus a warning per rejected graph.
pub fn trainable<'a>(graphs: impl IntoIterator<Item = &'a ContactGraph>) -> (Vec<&'a ContactGraph>, Vec<String>) {
    let mut ok = Vec::new();
    let mut warnings = Vec::new();
    for g in graphs {
        if g.len() < 2 {
            warnings.push(format!("{}: fewer than 2 components", g.shape_id));
        } else if g.edges.is_empty() {
            warnings.push(format!("{}: no contacts", g.shape_id));
        } else {
            ok.push(g);
        }
    }
    (ok, warnings)
}

/// The triplet drawn for graph `gi` in `epoch`; a pure function of the seed.
pub fn epoch_triplet(
    sampler: &TripletSampler,
    seed: u64,
    epoch: usize,
    gi: usize,
) -> Result<TrainingTriplet, SamplerError> {
    let mut rng = rng_for(seed, &["triplet", &epoch.to_string(), &gi.to_string()]);
    sampler.sample(gi, &mut rng)
}

/// Visiting order of the training graphs in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &["order", &epoch.to_string()]));
    order
}

/// Parameter seeds so that joint and placement inits never coincide.
pub fn init_seed(seed: u64, net: &str) -> u64 {
    derive_seed(seed, &["init", net])
}

/// Contrastive loss of one triplet and its gradients for `f` and `g`.
/// Gradients are `None` when the hinge is inactive.
pub fn joint_triplet_loss(
    f: &EmbeddingNet,
    g: &RetrievalNet,
    t: &TrainingTriplet,
    margin: f64,
) -> Result<(f64, Option<(Vec<Tensor>, Vec<Tensor>)>), TrainError> {
    let n = f.config().n_points;
    let mut tape = Tape::new();
    let pf = f.params().bind(&mut tape);
    let pg = g.params().bind(&mut tape);
    let x = tape.constant(cloud_tensor(&t.x, n)?);
    let y = tape.constant(cloud_tensor(&t.y, n)?);
    let z = tape.constant(cloud_tensor(&t.z, n)?);
    let mix = g.forward(&mut tape, &pg, x)?;
    let fy = f.forward(&mut tape, &pf, y)?;
    let fz = f.forward(&mut tape, &pf, z)?;
    let ep = gmm_nll_tape(&mut tape, &mix, fy)?;
    let en = gmm_nll_tape(&mut tape, &mix, fz)?;
    let l = contrastive_tape(&mut tape, ep, en, margin)?;
    let loss = tape.value(l).item();
    if !(loss > 0.0) {
        return Ok((loss, None));
    }
    let grads = tape.backward(l)?;
    Ok((loss, Some((pf.gradients(&tape, &grads), pg.gradients(&tape, &grads)))))
}

/// Squared placement loss of one triplet's positive and its gradients.
pub fn placement_triplet_loss(h: &PlacementNet, t: &TrainingTriplet) -> Result<(f64, Vec<Tensor>), TrainError> {
    let n = h.config().n_points;
    let mut tape = Tape::new();
    let p = h.params().bind(&mut tape);
    let x = tape.constant(cloud_tensor(&t.x, n)?);
    let y = tape.constant(cloud_tensor(&t.y, n)?);
    let out = h.forward(&mut tape, &p, x, y)?;
    let target = tape.constant(Tensor::row(&t.y_target_centroid));
    let l = placement_loss_tape(&mut tape, out, target)?;
    let loss = tape.value(l).item();
    let grads = tape.backward(l)?;
    Ok((loss, p.gradients(&tape, &grads)))
}

fn zeros_like(p: &ParamSet) -> Vec<Tensor> {
    p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn scale_all(grads: &mut [Tensor], c: f64) {
    for g in grads {
        for v in g.data_mut() {
            *v *= c;
        }
    }
}

/// Periodic and best checkpoints under an optional output directory.
struct Checkpoints<'a> {
    dir: Option<&'a Path>,
    every: usize,
    best: f64,
}

impl<'a> Checkpoints<'a> {
    fn new(dir: Option<&'a Path>, every: usize) -> Result<Self, TrainError> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d.join("checkpoints"))?;
        }
        Ok(Self {
            dir,
            every,
            best: f64::INFINITY,
        })
    }

    /// Calls `save(dir, tag)` for the periodic and best slots that apply.
    fn after_epoch(
        &mut self,
        epoch: usize,
        loss: f64,
        mut save: impl FnMut(&Path, &str) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        let Some(dir) = self.dir else { return Ok(()) };
        let ck = dir.join("checkpoints");
        if self.every > 0 && (epoch + 1) % self.every == 0 {
            save(&ck, &format!("epoch{:05}", epoch + 1))?;
        }
        if loss < self.best {
            self.best = loss;
            save(&ck, "best")?;
        }
        Ok(())
    }

    fn last_good(&self, save: impl FnOnce(&Path, &str) -> Result<(), TrainError>) -> Option<PathBuf> {
        let dir = self.dir?.join("checkpoints");
        save(&dir, "last_good").ok()?;
        Some(dir)
    }
}

fn write_log(dir: Option<&Path>, name: &str, log: &TrainLog) -> Result<(), TrainError> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::write(dir.join(format!("{name}_log.jsonl")), log.to_jsonl())?;
    let mut f = std::fs::File::create(dir.join(format!("{name}_timing.jsonl")))?;
    for t in &log.timing {
        writeln!(f, "{}", serde_json::to_string(t).expect("plain data"))?;
    }
    Ok(())
}

fn stamp(cfg: &TrainConfig, epoch: usize) -> String {
    format!("seed={} epochs={} batch={}", cfg.seed, epoch, cfg.batch)
}

fn diverged(epoch: usize, step: u64, reason: String, last_good: Option<PathBuf>) -> TrainError {
    TrainError::Diverged {
        epoch,
        step,
        reason,
        last_good,
    }
}

fn adam_reason(e: AdamError) -> String {
    e.to_string()
}

fn save_joint(f: &EmbeddingNet, g: &RetrievalNet, dir: &Path, tag: &str, stamp: &str) -> Result<(), TrainError> {
    f.save(&dir.join(format!("f_{tag}.ckpt")), stamp)?;
    g.save(&dir.join(format!("g_{tag}.ckpt")), stamp)?;
    Ok(())
}

fn step_capped(cfg: &TrainConfig, step: u64) -> bool {
    cfg.max_steps.is_some_and(|m| step >= m)
}

/// Trains `f` and `g` jointly on the contrastive objective.
pub fn train_joint(
    graphs: &[&ContactGraph],
    net: &NetConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<JointOutcome, TrainError> {
    cfg.validate()?;
    let (train, warnings) = trainable(graphs.iter().copied());
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let sampler = TripletSampler::new(train, net.n_points).with_policy(cfg.negatives);
    let mut f = EmbeddingNet::new(net, init_seed(cfg.seed, "f"));
    let mut g = RetrievalNet::new(net, init_seed(cfg.seed, "g"));
    let adam = AdamConfig::default();
    let mut sf = AdamState::new(f.params());
    let mut sg = AdamState::new(g.params());
    let mut ckpt = Checkpoints::new(out, cfg.checkpoint_every)?;
    let mut log = TrainLog {
        records: Vec::new(),
        timing: Vec::new(),
        warnings,
    };
    let mut step = 0u64;
    let n = sampler.graphs().len();

    for epoch in 0..cfg.epochs {
        if step_capped(cfg, step) {
            break;
        }
        let started = Instant::now();
        let order = epoch_order(cfg.seed, epoch, n);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut lr = cfg.lr_at(step);
        for chunk in order.chunks(cfg.batch) {
            if step_capped(cfg, step) {
                break;
            }
            let results: Vec<_> = chunk
                .par_iter()
                .map(|&gi| {
                    let t = epoch_triplet(&sampler, cfg.seed, epoch, gi)?;
                    joint_triplet_loss(&f, &g, &t, cfg.margin)
                })
                .collect();
            let mut gf = zeros_like(f.params());
            let mut gg = zeros_like(g.params());
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                if let Some((a, b)) = grads {
                    gf.iter_mut().zip(&a).for_each(|(s, x)| s.add_assign(x));
                    gg.iter_mut().zip(&b).for_each(|(s, x)| s.add_assign(x));
                }
            }
            let failure = if !batch_loss.is_finite() {
                Some(format!("non-finite loss {batch_loss}"))
            } else {
                let inv = 1.0 / chunk.len() as f64;
                scale_all(&mut gf, inv);
                scale_all(&mut gg, inv);
                lr = cfg.lr_at(step);
                let (f0, g0) = (f.params().clone(), g.params().clone());
                let applied = adam_step(f.params_mut(), &gf, &mut sf, lr, &adam)
                    .and_then(|_| adam_step(g.params_mut(), &gg, &mut sg, lr, &adam));
                applied.err().map(|e| {
                    *f.params_mut() = f0;
                    *g.params_mut() = g0;
                    adam_reason(e)
                })
            };
            if let Some(reason) = failure {
                let lg = ckpt.last_good(|dir, tag| save_joint(&f, &g, dir, tag, &stamp(cfg, epoch)));
                return Err(diverged(epoch, step, reason, lg));
            }
            step += 1;
            total += batch_loss;
            count += chunk.len();
        }
        if count == 0 {
            break;
        }
        let rec = EpochRecord {
            epoch,
            step,
            lr,
            loss: total / count as f64,
            error: None,
        };
        ckpt.after_epoch(epoch, rec.loss, |dir, tag| {
            save_joint(&f, &g, dir, tag, &stamp(cfg, epoch + 1))
        })?;
        on_epoch(&rec);
        log.records.push(rec);
        log.timing.push(EpochTiming {
            epoch,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    if let Some(dir) = out {
        let epochs = log.records.len();
        f.save(&dir.join("f.ckpt"), &stamp(cfg, epochs))?;
        g.save(&dir.join("g.ckpt"), &stamp(cfg, epochs))?;
    }
    write_log(out, "joint", &log)?;
    Ok(JointOutcome { f, g, log })
}

/// Trains the placement network on the positives of the triplet stream.
pub fn train_placement(
    graphs: &[&ContactGraph],
    net: &NetConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PlacementOutcome, TrainError> {
    cfg.validate()?;
    let (train, warnings) = trainable(graphs.iter().copied());
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let sampler = TripletSampler::new(train, net.n_points).with_policy(cfg.negatives);
    let mut h = PlacementNet::new(net, init_seed(cfg.seed, "h"));
    let adam = AdamConfig::default();
    let mut sh = AdamState::new(h.params());
    let mut ckpt = Checkpoints::new(out, cfg.checkpoint_every)?;
    let mut log = TrainLog {
        records: Vec::new(),
        timing: Vec::new(),
        warnings,
    };
    let mut step = 0u64;
    let n = sampler.graphs().len();

    for epoch in 0..cfg.epochs {
        if step_capped(cfg, step) {
            break;
        }
        let started = Instant::now();
        let order = epoch_order(cfg.seed, epoch, n);
        let (mut total, mut err_total, mut count) = (0.0, 0.0, 0usize);
        let mut lr = cfg.lr_at(step);
        for chunk in order.chunks(cfg.batch) {
            if step_capped(cfg, step) {
                break;
            }
            let results: Vec<_> = chunk
                .par_iter()
                .map(|&gi| {
                    let t = epoch_triplet(&sampler, cfg.seed, epoch, gi)?;
                    placement_triplet_loss(&h, &t)
                })
                .collect();
            let mut gh = zeros_like(h.params());
            let (mut batch_loss, mut batch_err) = (0.0, 0.0);
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                batch_err += loss.sqrt();
                gh.iter_mut().zip(&grads).for_each(|(s, x)| s.add_assign(x));
            }
            let h0 = h.params().clone();
            let failure = if !batch_loss.is_finite() {
                Some(format!("non-finite loss {batch_loss}"))
            } else {
                scale_all(&mut gh, 1.0 / chunk.len() as f64);
                lr = cfg.lr_at(step);
                adam_step(h.params_mut(), &gh, &mut sh, lr, &adam)
                    .err()
                    .map(adam_reason)
            };
            if let Some(reason) = failure {
                *h.params_mut() = h0;
                let lg = ckpt.last_good(|dir, tag| Ok(h.save(&dir.join(format!("h_{tag}.ckpt")), &stamp(cfg, epoch))?));
                return Err(diverged(epoch, step, reason, lg));
            }
            step += 1;
            total += batch_loss;
            err_total += batch_err;
            count += chunk.len();
        }
        if count == 0 {
            break;
        }
        let rec = EpochRecord {
            epoch,
            step,
            lr,
            loss: total / count as f64,
            error: Some(err_total / count as f64),
        };
        ckpt.after_epoch(epoch, rec.loss, |dir, tag| {
            Ok(h.save(&dir.join(format!("h_{tag}.ckpt")), &stamp(cfg, epoch + 1))?)
        })?;
        on_epoch(&rec);
        log.records.push(rec);
        log.timing.push(EpochTiming {
            epoch,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    if let Some(dir) = out {
        h.save(&dir.join("h.ckpt"), &stamp(cfg, log.records.len()))?;
    }
    write_log(out, "placement", &log)?;
    Ok(PlacementOutcome { h, log })
}
