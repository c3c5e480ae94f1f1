//! The three networks: component embedding `f`, retrieval `g` with a
//! Gaussian-mixture head, and placement `h`.
//!
//! Each network owns a [`ParamSet`] and can run its forward pass on any
//! tape with parameters bound either as leaves (training) or constants
//! (inference).

mod mixture;

use partforge_autodiff::{BoundParams, Checkpoint, CheckpointError, ParamSet, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, PointCloud};

pub use mixture::{GaussianMixture, MixtureError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("expected {expected} input points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Widths of the shared per-point layers.
    pub point_mlp: Vec<usize>,
    /// Widths of the layers after max pooling.
    pub post_mlp: Vec<usize>,
}

impl EncoderConfig {
    pub fn out_dim(&self) -> usize {
        *self.post_mlp.last().or(self.point_mlp.last()).unwrap_or(&3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    /// Points per input cloud.
    pub n_points: usize,
    pub embed_dim: usize,
    pub n_modes: usize,
    pub sigma_cap: f64,
    /// Hidden widths of the placement head before its 3-unit output.
    pub placement_head: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                point_mlp: vec![64, 64, 64, 128, 1024],
                post_mlp: vec![512, 256],
            },
            n_points: 1000,
            embed_dim: 50,
            n_modes: 8,
            sigma_cap: 0.05,
            placement_head: vec![512, 256],
        }
    }
}

impl NetConfig {
    /// A narrow configuration that trains in minutes on one CPU core.
    pub fn compact() -> Self {
        Self {
            encoder: EncoderConfig {
                point_mlp: vec![32, 64, 128],
                post_mlp: vec![128],
            },
            n_points: 256,
            embed_dim: 50,
            n_modes: 8,
            sigma_cap: 0.05,
            placement_head: vec![128, 64],
        }
    }
}

/// Converts a cloud to an `[n, 3]` tensor, checking the point count.
pub fn cloud_tensor(cloud: &PointCloud, expected: usize) -> Result<Tensor> {
    if cloud.len() != expected {
        return Err(NetError::PointCount {
            expected,
            got: cloud.len(),
        });
    }
    Ok(Tensor::new(vec![expected, 3], cloud.flat())?)
}

/// How freshly created tensors are filled.
enum Init<'a> {
    Zeros,
    Random(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn build(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: &mut Init,
        bound_scale: f64,
        bias: f64,
    ) -> Self {
        let limit = bound_scale * (6.0 / fan_in as f64).sqrt();
        let data = match init {
            Init::Zeros => vec![0.0; fan_in * fan_out],
            Init::Random(rng) => (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
        };
        let bias = match init {
            Init::Zeros => 0.0,
            Init::Random(_) => bias,
        };
        let w = params.push(
            format!("{name}.w"),
            Tensor::new(vec![fan_in, fan_out], data).expect("shape"),
        );
        let b = params.push(format!("{name}.b"), Tensor::full(&[1, fan_out], bias));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(self.w))?;
        Ok(tape.add(y, p.get(self.b))?)
    }

    pub fn weight_index(&self) -> usize {
        self.w
    }

    pub fn bias_index(&self) -> usize {
        self.b
    }
}

/// Shared per-point MLP, max pool over points, then a dense MLP; relu
/// after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNetEncoder {
    point_layers: Vec<Linear>,
    post_layers: Vec<Linear>,
}

impl PointNetEncoder {
    fn build(params: &mut ParamSet, prefix: &str, cfg: &EncoderConfig, init: &mut Init) -> Self {
        let mut fan_in = 3;
        let mut point_layers = Vec::new();
        for (i, &w) in cfg.point_mlp.iter().enumerate() {
            point_layers.push(Linear::build(
                params,
                &format!("{prefix}.point{i}"),
                fan_in,
                w,
                init,
                1.0,
                0.0,
            ));
            fan_in = w;
        }
        let mut post_layers = Vec::new();
        for (i, &w) in cfg.post_mlp.iter().enumerate() {
            post_layers.push(Linear::build(
                params,
                &format!("{prefix}.post{i}"),
                fan_in,
                w,
                init,
                1.0,
                0.0,
            ));
            fan_in = w;
        }
        Self {
            point_layers,
            post_layers,
        }
    }

    /// `[n, 3]` points → `[1, out_dim]` feature.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, points: Var) -> Result<Var> {
        let mut h = points;
        for l in &self.point_layers {
            let z = l.forward(tape, p, h)?;
            h = tape.relu(z);
        }
        h = tape.max_over_axis(h, 0)?;
        for l in &self.post_layers {
            let z = l.forward(tape, p, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub fn point_layers(&self) -> &[Linear] {
        &self.point_layers
    }

    pub fn post_layers(&self) -> &[Linear] {
        &self.post_layers
    }
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checks that `given` has exactly the names and shapes of `layout`.
fn check_layout(layout: &ParamSet, given: &ParamSet) -> Result<()> {
    if layout.len() != given.len() {
        return Err(NetError::Layout(format!(
            "expected {} tensors, found {}",
            layout.len(),
            given.len()
        )));
    }
    for i in 0..layout.len() {
        if layout.name(i) != given.name(i) || layout.tensor(i).shape() != given.tensor(i).shape() {
            return Err(NetError::Layout(format!(
                "tensor {i}: expected `{}` {:?}, found `{}` {:?}",
                layout.name(i),
                layout.tensor(i).shape(),
                given.name(i),
                given.tensor(i).shape()
            )));
        }
    }
    Ok(())
}

/// Checkpoint metadata stored as JSON next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    pub kind: String,
    pub config: NetConfig,
    /// Free-form provenance, e.g. the dataset seed and version.
    pub stamp: String,
}

fn save_net(path: &std::path::Path, kind: &str, cfg: &NetConfig, params: &ParamSet, stamp: &str) -> Result<()> {
    let meta = NetMeta {
        kind: kind.into(),
        config: cfg.clone(),
        stamp: stamp.into(),
    };
    let json = serde_json::to_string(&meta).map_err(|e| NetError::Meta(e.to_string()))?;
    Checkpoint::new(json, params.clone()).save(path)?;
    Ok(())
}

fn load_net(path: &std::path::Path, kind: &str) -> Result<(NetMeta, ParamSet)> {
    let ck = Checkpoint::load(path)?;
    let meta: NetMeta = serde_json::from_str(&ck.meta).map_err(|e| NetError::Meta(e.to_string()))?;
    if meta.kind != kind {
        return Err(NetError::Meta(format!(
            "expected a `{kind}` checkpoint, found `{}`",
            meta.kind
        )));
    }
    Ok((meta, ck.params))
}

macro_rules! net_common {
    ($ty:ident, $kind:literal) => {
        impl $ty {
            pub const KIND: &'static str = $kind;

            pub fn config(&self) -> &NetConfig {
                &self.cfg
            }

            pub fn params(&self) -> &ParamSet {
                &self.params
            }

            pub fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.params
            }

            /// Network with every parameter zero.
            pub fn zeros(cfg: &NetConfig) -> Self {
                Self::build(cfg, &mut Init::Zeros)
            }

            /// Network with He-uniform weights drawn from `seed`.
            pub fn new(cfg: &NetConfig, seed: u64) -> Self {
                Self::build(cfg, &mut Init::Random(&mut seeded(seed)))
            }

            /// Wraps existing parameters, checking names and shapes.
            pub fn from_params(cfg: &NetConfig, params: ParamSet) -> Result<Self> {
                let mut net = Self::zeros(cfg);
                check_layout(&net.params, &params)?;
                net.params = params;
                Ok(net)
            }

            pub fn save(&self, path: &std::path::Path, stamp: &str) -> Result<()> {
                save_net(path, Self::KIND, &self.cfg, &self.params, stamp)
            }

            pub fn load(path: &std::path::Path) -> Result<(Self, NetMeta)> {
                let (meta, params) = load_net(path, Self::KIND)?;
                Ok((Self::from_params(&meta.config, params)?, meta))
            }
        }
    };
}

/// `f`: centered component cloud → embedding coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    cfg: NetConfig,
    params: ParamSet,
    encoder: PointNetEncoder,
    head: Linear,
}

net_common!(EmbeddingNet, "embedding");

impl EmbeddingNet {
    fn build(cfg: &NetConfig, init: &mut Init) -> Self {
        let params = &mut ParamSet::new();
        let encoder = PointNetEncoder::build(params, "f.enc", &cfg.encoder, init);
        let head = Linear::build(params, "f.head", cfg.encoder.out_dim(), cfg.embed_dim, init, 1.0, 0.0);
        Self {
            cfg: cfg.clone(),
            params: std::mem::take(params),
            encoder,
            head,
        }
    }

    /// `[n, 3]` → `[1, embed_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, points: Var) -> Result<Var> {
        let feat = self.encoder.forward(tape, p, points)?;
        self.head.forward(tape, p, feat)
    }

    pub fn embed(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(cloud_tensor(cloud, self.cfg.n_points)?);
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn encoder(&self) -> &PointNetEncoder {
        &self.encoder
    }

    pub fn head(&self) -> Linear {
        self.head
    }
}

/// Tape handles of a predicted mixture.
#[derive(Debug, Clone, Copy)]
pub struct MixtureVars {
    /// `[1, K]` pre-softmax weight logits.
    pub logits: Var,
    /// `[1, K]` log-weights.
    pub log_phi: Var,
    /// `[1, K]` weights.
    pub phi: Var,
    /// `[K, D]` means.
    pub mu: Var,
    /// `[K, D]` standard deviations.
    pub sigma: Var,
}

/// `g`: object-frame assembly cloud → mixture over embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalNet {
    cfg: NetConfig,
    params: ParamSet,
    encoder: PointNetEncoder,
    logits: Linear,
    mu: Linear,
    sigma: Linear,
}

net_common!(RetrievalNet, "retrieval");

impl RetrievalNet {
    fn build(cfg: &NetConfig, init: &mut Init) -> Self {
        let params = &mut ParamSet::new();
        let encoder = PointNetEncoder::build(params, "g.enc", &cfg.encoder, init);
        let feat = cfg.encoder.out_dim();
        let kd = cfg.n_modes * cfg.embed_dim;
        let logits = Linear::build(params, "g.phi", feat, cfg.n_modes, init, 0.1, 0.0);
        let mu = Linear::build(params, "g.mu", feat, kd, init, 1.0, 0.0);
        // Start σ one nat below its cap so the clamp does not swallow the
        // gradient from the first step.
        let sigma = Linear::build(params, "g.sigma", feat, kd, init, 0.01, cfg.sigma_cap.ln() - 1.0);
        Self {
            cfg: cfg.clone(),
            params: std::mem::take(params),
            encoder,
            logits,
            mu,
            sigma,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, points: Var) -> Result<MixtureVars> {
        let (k, d) = (self.cfg.n_modes, self.cfg.embed_dim);
        let feat = self.encoder.forward(tape, p, points)?;
        let logits = self.logits.forward(tape, p, feat)?;
        let log_phi = tape.log_softmax(logits)?;
        let phi = tape.softmax(logits)?;
        let mu_flat = self.mu.forward(tape, p, feat)?;
        let mu = tape.reshape(mu_flat, &[k, d])?;
        let s_flat = self.sigma.forward(tape, p, feat)?;
        let s = tape.reshape(s_flat, &[k, d])?;
        let e = tape.exp(s);
        let sigma = tape.clamp_max(e, self.cfg.sigma_cap);
        Ok(MixtureVars {
            logits,
            log_phi,
            phi,
            mu,
            sigma,
        })
    }

    pub fn predict(&self, assembly: &PointCloud) -> Result<GaussianMixture> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(cloud_tensor(assembly, self.cfg.n_points)?);
        let m = self.forward(&mut tape, &p, x)?;
        Ok(GaussianMixture::from_tape(&tape, &m))
    }

    pub fn encoder(&self) -> &PointNetEncoder {
        &self.encoder
    }

    /// `(logits, mu, sigma)` output layers.
    pub fn heads(&self) -> (Linear, Linear, Linear) {
        (self.logits, self.mu, self.sigma)
    }
}

/// `h`: (assembly cloud, centered component cloud) → component centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementNet {
    cfg: NetConfig,
    params: ParamSet,
    assembly_encoder: PointNetEncoder,
    component_encoder: PointNetEncoder,
    hidden: Vec<Linear>,
    out: Linear,
}

net_common!(PlacementNet, "placement");

impl PlacementNet {
    fn build(cfg: &NetConfig, init: &mut Init) -> Self {
        let params = &mut ParamSet::new();
        let assembly_encoder = PointNetEncoder::build(params, "h.asm", &cfg.encoder, init);
        let component_encoder = PointNetEncoder::build(params, "h.cmp", &cfg.encoder, init);
        let mut fan_in = 2 * cfg.encoder.out_dim();
        let mut hidden = Vec::new();
        for (i, &w) in cfg.placement_head.iter().enumerate() {
            hidden.push(Linear::build(params, &format!("h.mlp{i}"), fan_in, w, init, 1.0, 0.0));
            fan_in = w;
        }
        let out = Linear::build(params, "h.out", fan_in, 3, init, 0.1, 0.0);
        Self {
            cfg: cfg.clone(),
            params: std::mem::take(params),
            assembly_encoder,
            component_encoder,
            hidden,
            out,
        }
    }

    /// `[n, 3]`, `[n, 3]` → `[1, 3]`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, assembly: Var, component: Var) -> Result<Var> {
        let a = self.assembly_encoder.forward(tape, p, assembly)?;
        let c = self.component_encoder.forward(tape, p, component)?;
        let mut h = tape.concat(&[a, c], 1)?;
        for l in &self.hidden {
            let z = l.forward(tape, p, h)?;
            h = tape.relu(z);
        }
        self.out.forward(tape, p, h)
    }

    pub fn place(&self, assembly: &PointCloud, component: &PointCloud) -> Result<Point3> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let a = tape.constant(cloud_tensor(assembly, self.cfg.n_points)?);
        let c = tape.constant(cloud_tensor(component, self.cfg.n_points)?);
        let y = self.forward(&mut tape, &p, a, c)?;
        let d = tape.value(y).data();
        Ok([d[0], d[1], d[2]])
    }

    pub fn encoders(&self) -> (&PointNetEncoder, &PointNetEncoder) {
        (&self.assembly_encoder, &self.component_encoder)
    }

    pub fn head(&self) -> (&[Linear], Linear) {
        (&self.hidden, self.out)
    }
}
