//! Training triplets drawn from contact graphs.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Component, ContactGraph};
use crate::geometry::{resample_union, Frame, GeometryError, Point3, PointCloud, WeightedPart};

/// Attempts before a graph is declared unusable.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("shape `{shape}` has {n} components; at least 2 are needed")]
    TooSmall { shape: String, n: usize },
    #[error("shape `{0}`: no connected subgraph with an adjacent complement after {MAX_ATTEMPTS} attempts")]
    NoComplement(String),
    #[error("graph index {0} out of range")]
    BadIndex(usize),
    #[error("component `{key}` has {got} points, {needed} needed")]
    PointCount { key: String, needed: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A component addressed by graph and node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentRef {
    pub graph: usize,
    pub node: usize,
}

/// Where negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// Non-adjacent components of the same shape or components of other
    /// shapes, half each when the shape has any.
    #[default]
    Complement,
    /// Negatives drawn like positives. Removes the learning signal; used as
    /// a sanity check.
    SameAsPositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub graph: usize,
    /// Sorted node indices of the partial assembly.
    pub members: Vec<usize>,
    pub positive: usize,
    pub negative: ComponentRef,
    /// Partial assembly in the normalized object frame.
    pub x: PointCloud,
    /// Centered positive.
    pub y: PointCloud,
    /// Centered negative.
    pub z: PointCloud,
    /// Where the positive sits in the object frame.
    pub y_target_centroid: Point3,
}

/// The first `n` stored points of a component. Stored clouds are i.i.d.
/// surface samples, so any prefix is itself a uniform sample.
pub fn component_input(c: &Component, n: usize) -> Result<PointCloud, SamplerError> {
    let pts = c.cloud_centered.points();
    if pts.len() < n {
        return Err(SamplerError::PointCount {
            key: c.key(),
            needed: n,
            got: pts.len(),
        });
    }
    Ok(PointCloud::new(pts[..n].to_vec(), Frame::Centered)?)
}

/// Nodes adjacent to `members` that are not members themselves.
pub fn frontier(g: &ContactGraph, members: &BTreeSet<usize>) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for &m in members {
        for nb in g.neighbors(m) {
            if !members.contains(&nb) {
                out.insert(nb);
            }
        }
    }
    out.into_iter().collect()
}

/// Grows a connected subgraph of `r` nodes from a uniform start by
/// repeatedly adding a uniform frontier node. `None` when the start's
/// connected piece has fewer than `r` nodes.
pub fn grow_subgraph<R: Rng + ?Sized>(g: &ContactGraph, r: usize, rng: &mut R) -> Option<BTreeSet<usize>> {
    let mut members = BTreeSet::new();
    members.insert(rng.random_range(0..g.len()));
    while members.len() < r {
        let f = frontier(g, &members);
        if f.is_empty() {
            return None;
        }
        members.insert(f[rng.random_range(0..f.len())]);
    }
    Some(members)
}

/// Draws triplets from a fixed list of graphs.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    graphs: Vec<&'a ContactGraph>,
    n_points: usize,
    policy: NegativePolicy,
    /// `offsets[i]` is the flat index of graph `i`'s first component.
    offsets: Vec<usize>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(graphs: Vec<&'a ContactGraph>, n_points: usize) -> Self {
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut total = 0;
        for g in &graphs {
            offsets.push(total);
            total += g.len();
        }
        offsets.push(total);
        Self {
            graphs,
            n_points,
            policy: NegativePolicy::Complement,
            offsets,
        }
    }

    pub fn with_policy(mut self, policy: NegativePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn graphs(&self) -> &[&'a ContactGraph] {
        &self.graphs
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn component(&self, r: ComponentRef) -> &'a Component {
        &self.graphs[r.graph].nodes[r.node]
    }

    fn total_components(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Uniform component of any graph but `gi`.
    fn other_shape_component<R: Rng + ?Sized>(&self, gi: usize, rng: &mut R) -> Option<ComponentRef> {
        let own = self.graphs[gi].len();
        let pool = self.total_components() - own;
        if pool == 0 {
            return None;
        }
        let mut flat = rng.random_range(0..pool);
        if flat >= self.offsets[gi] {
            flat += own;
        }
        let graph = self.offsets.partition_point(|&o| o <= flat) - 1;
        Some(ComponentRef {
            graph,
            node: flat - self.offsets[graph],
        })
    }

    /// Partial assembly, positive and ground-truth subgraph for graph `gi`.
    pub fn sample_query<R: Rng + ?Sized>(&self, gi: usize, rng: &mut R) -> Result<(Vec<usize>, usize), SamplerError> {
        let g = *self.graphs.get(gi).ok_or(SamplerError::BadIndex(gi))?;
        let n = g.len();
        if n < 2 {
            return Err(SamplerError::TooSmall {
                shape: g.shape_id.clone(),
                n,
            });
        }
        for _ in 0..MAX_ATTEMPTS {
            let r = rng.random_range(1..n);
            let Some(members) = grow_subgraph(g, r, rng) else {
                continue;
            };
            let f = frontier(g, &members);
            if f.is_empty() {
                continue;
            }
            let positive = f[rng.random_range(0..f.len())];
            return Ok((members.into_iter().collect(), positive));
        }
        Err(SamplerError::NoComplement(g.shape_id.clone()))
    }

    fn sample_negative<R: Rng + ?Sized>(
        &self,
        gi: usize,
        members: &[usize],
        rng: &mut R,
    ) -> Result<ComponentRef, SamplerError> {
        let g = self.graphs[gi];
        if self.policy == NegativePolicy::SameAsPositive {
            let set: BTreeSet<usize> = members.iter().copied().collect();
            let f = frontier(g, &set);
            return Ok(ComponentRef {
                graph: gi,
                node: f[rng.random_range(0..f.len())],
            });
        }
        let same: Vec<usize> = (0..g.len())
            .filter(|&j| !members.contains(&j) && !members.iter().any(|&m| g.has_edge(m, j)))
            .collect();
        let other = self.total_components() > g.len();
        let use_same = !same.is_empty() && (!other || rng.random_bool(0.5));
        if use_same {
            return Ok(ComponentRef {
                graph: gi,
                node: same[rng.random_range(0..same.len())],
            });
        }
        self.other_shape_component(gi, rng)
            .ok_or_else(|| SamplerError::NoComplement(g.shape_id.clone()))
    }

    /// Draws one triplet from graph `gi`.
    pub fn sample<R: Rng + ?Sized>(&self, gi: usize, rng: &mut R) -> Result<TrainingTriplet, SamplerError> {
        let (members, positive) = self.sample_query(gi, rng)?;
        let negative = self.sample_negative(gi, &members, rng)?;
        let g = self.graphs[gi];
        let parts: Vec<WeightedPart> = members
            .iter()
            .map(|&m| WeightedPart {
                cloud: &g.nodes[m].cloud_centered,
                position: g.nodes[m].centroid,
                weight: g.nodes[m].surface_area,
            })
            .collect();
        let x = resample_union(&parts, self.n_points, rng)?;
        let pos = &g.nodes[positive];
        let t = TrainingTriplet {
            graph: gi,
            y: component_input(pos, self.n_points)?,
            z: component_input(self.component(negative), self.n_points)?,
            y_target_centroid: pos.centroid,
            x,
            members,
            positive,
            negative,
        };
        debug_assert!(self.violation(&t).is_none(), "{:?}", self.violation(&t));
        Ok(t)
    }

    /// Describes the first broken triplet invariant, if any.
    pub fn violation(&self, t: &TrainingTriplet) -> Option<String> {
        let g = self.graphs.get(t.graph)?;
        let set: BTreeSet<usize> = t.members.iter().copied().collect();
        if set.is_empty() || set.len() != t.members.len() || set.iter().any(|&m| m >= g.len()) {
            return Some("bad member list".into());
        }
        // Connectivity by flood fill inside the member set.
        let start = *set.iter().next().expect("non-empty");
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for nb in g.neighbors(v) {
                if set.contains(&nb) && seen.insert(nb) {
                    stack.push(nb);
                }
            }
        }
        if seen.len() != set.len() {
            return Some("partial assembly is not connected".into());
        }
        if set.contains(&t.positive) || !set.iter().any(|&m| g.has_edge(m, t.positive)) {
            return Some(format!("positive {} is not an adjacent non-member", t.positive));
        }
        if self.policy == NegativePolicy::Complement && t.negative.graph == t.graph {
            let z = t.negative.node;
            if set.contains(&z) || set.iter().any(|&m| g.has_edge(m, z)) {
                return Some(format!("negative {z} touches the partial assembly"));
            }
        }
        if t.x.len() != self.n_points || t.y.len() != self.n_points || t.z.len() != self.n_points {
            return Some("wrong point count".into());
        }
        None
    }
}
