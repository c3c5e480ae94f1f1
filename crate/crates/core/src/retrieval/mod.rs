//! Inference: embed the component database, predict a mixture for a
//! partial assembly, pick candidates and place them.

mod index;
mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Component;
use crate::geometry::{resample_union, GeometryError, Point3, PointCloud, WeightedPart};
use crate::nn::{EmbeddingNet, GaussianMixture, MixtureError, NetError, PlacementNet, RetrievalNet};
use crate::seed::rng_for;
use crate::train::{component_input, SamplerError};

pub use index::{EmbeddingIndex, EntryInfo, IndexEntry};
pub use synth::{
    auto_assemble, auto_assemble_tree, write_trajectory, StopReason, SynthConfig, Trajectory, TrajectoryStep, TreeNode,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("the component index is empty")]
    EmptyIndex,
    #[error("the assembly has no parts")]
    EmptyAssembly,
    #[error("embedding dimension {got}, index uses {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("duplicate index key `{0}`")]
    DuplicateKey(String),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("missing model files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingModels(Vec<PathBuf>),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

/// The three trained networks.
#[derive(Debug, Clone)]
pub struct Models {
    pub f: EmbeddingNet,
    pub g: RetrievalNet,
    pub h: PlacementNet,
}

impl Models {
    pub const FILES: [&'static str; 3] = ["f.ckpt", "g.ckpt", "h.ckpt"];

    /// Loads `f.ckpt`, `g.ckpt` and `h.ckpt` from `dir`, listing every
    /// missing file at once.
    pub fn load(dir: &Path) -> Result<Self> {
        let paths: Vec<PathBuf> = Self::FILES.iter().map(|f| dir.join(f)).collect();
        let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
        if !missing.is_empty() {
            return Err(RetrievalError::MissingModels(missing));
        }
        Ok(Self {
            f: EmbeddingNet::load(&paths[0])?.0,
            g: RetrievalNet::load(&paths[1])?.0,
            h: PlacementNet::load(&paths[2])?.0,
        })
    }

    pub fn save(&self, dir: &Path, stamp: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.f.save(&dir.join(Self::FILES[0]), stamp)?;
        self.g.save(&dir.join(Self::FILES[1]), stamp)?;
        self.h.save(&dir.join(Self::FILES[2]), stamp)?;
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.g.config().n_points
    }
}

/// A component placed in the assembly frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedPart {
    pub component: Component,
    pub position: Point3,
}

impl PlacedPart {
    /// The component at its ground-truth position.
    pub fn at_origin_of(component: &Component) -> Self {
        Self {
            component: component.clone(),
            position: component.centroid,
        }
    }

    pub fn key(&self) -> String {
        self.component.key()
    }
}

/// An ordered list of placed parts. The point cloud fed to the networks is
/// resampled from the parts with a seed fixed by `sample_seed` and the part
/// count, so equal part lists always give equal clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub parts: Vec<PlacedPart>,
    pub sample_seed: u64,
}

impl Assembly {
    pub fn new(seed_part: PlacedPart, sample_seed: u64) -> Self {
        Self {
            parts: vec![seed_part],
            sample_seed,
        }
    }

    pub fn keys(&self) -> BTreeSet<String> {
        self.parts.iter().map(PlacedPart::key).collect()
    }

    /// `n` area-weighted points from the union of the placed parts.
    pub fn cloud(&self, n: usize) -> Result<PointCloud> {
        if self.parts.is_empty() {
            return Err(RetrievalError::EmptyAssembly);
        }
        let parts: Vec<WeightedPart> = self
            .parts
            .iter()
            .map(|p| WeightedPart {
                cloud: &p.component.cloud_centered,
                position: p.position,
                weight: p.component.surface_area,
            })
            .collect();
        let mut rng = rng_for(self.sample_seed, &["assembly", &self.parts.len().to_string()]);
        Ok(resample_union(&parts, n, &mut rng)?)
    }

    /// Every stored point of every part at its placement.
    pub fn full_cloud(&self) -> Result<PointCloud> {
        let points: Vec<Point3> = self
            .parts
            .iter()
            .flat_map(|p| p.component.cloud_centered.placed_at(p.position).into_points())
            .collect();
        Ok(PointCloud::object(points)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestMode {
    /// Draw coordinates from the mixture and take their nearest entries.
    #[default]
    Sample,
    /// Rank every entry by mixture density.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuggestConfig {
    pub n_candidates: usize,
    pub mode: SuggestMode,
    /// Mixture draws per round in sample mode; duplicates collapse, so the
    /// result may hold fewer than `n_candidates` entries.
    pub draws: usize,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8,
            mode: SuggestMode::Sample,
            draws: 8,
        }
    }
}

impl SuggestConfig {
    pub fn max(n_candidates: usize) -> Self {
        Self {
            n_candidates,
            mode: SuggestMode::Max,
            draws: n_candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Position in the index.
    pub entry: usize,
    pub key: String,
    /// `−E`: log mixture density at the entry's coordinate.
    pub log_score: f64,
    /// Mixture density at the entry's coordinate; may underflow to zero, so
    /// ranking uses `log_score`.
    pub score: f64,
    /// Mode the coordinate was drawn from (sample) or the most responsible
    /// mode (max).
    pub mode: usize,
    /// Predicted centroid, when a placement network was given.
    pub placement: Option<Point3>,
}

/// Candidates sorted by nonincreasing score, without duplicate keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub items: Vec<Suggestion>,
}

impl SuggestionSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn first(&self) -> Option<&Suggestion> {
        self.items.first()
    }
}

fn responsible_mode(mix: &GaussianMixture, y: &[f64]) -> usize {
    let lp = mix.component_log_densities(y);
    (0..lp.len()).fold(0, |best, k| if lp[k] > lp[best] { k } else { best })
}

/// Ranks candidate entries of `index` for a predicted mixture. Entries
/// rejected by `allowed` never appear.
pub fn rank_candidates<R: Rng + ?Sized>(
    mix: &GaussianMixture,
    index: &EmbeddingIndex,
    cfg: &SuggestConfig,
    allowed: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Result<Vec<Suggestion>> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if index.entry(0).coord.len() != mix.dim() {
        return Err(RetrievalError::Dimension {
            expected: index.entry(0).coord.len(),
            got: mix.dim(),
        });
    }
    let mut picked: Vec<(usize, usize)> = Vec::new();
    match cfg.mode {
        SuggestMode::Max => {
            for i in (0..index.len()).filter(|&i| allowed(i)) {
                picked.push((i, responsible_mode(mix, &index.entry(i).coord)));
            }
        }
        SuggestMode::Sample => {
            for _ in 0..cfg.draws {
                let (mode, point) = mix.sample(rng);
                if let Some((i, _)) = index.nearest_filtered(&point, &allowed) {
                    if !picked.iter().any(|&(j, _)| j == i) {
                        picked.push((i, mode));
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(picked.len());
    for (i, mode) in picked {
        let e = index.entry(i);
        let log_score = -mix.nll(&e.coord)?;
        out.push(Suggestion {
            entry: i,
            key: e.key.clone(),
            log_score,
            score: log_score.exp(),
            mode,
            placement: None,
        });
    }
    out.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then(a.entry.cmp(&b.entry)));
    out.truncate(cfg.n_candidates);
    Ok(out)
}

/// Suggests complements for `assembly`, excluding parts already placed, and
/// predicts where each goes.
pub fn suggest<R: Rng + ?Sized>(
    g: &RetrievalNet,
    h: Option<&PlacementNet>,
    index: &EmbeddingIndex,
    assembly: &Assembly,
    cfg: &SuggestConfig,
    rng: &mut R,
) -> Result<SuggestionSet> {
    let n = g.config().n_points;
    let x = assembly.cloud(n)?;
    let mix = g.predict(&x)?;
    let placed = assembly.keys();
    let mut items = rank_candidates(&mix, index, cfg, |i| !placed.contains(&index.entry(i).key), rng)?;
    if let Some(h) = h {
        for s in &mut items {
            let y = component_input(&index.entry(s.entry).component, h.config().n_points)?;
            s.placement = Some(h.place(&x, &y)?);
        }
    }
    Ok(SuggestionSet { items })
}
