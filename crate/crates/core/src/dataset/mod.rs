//! Shape preprocessing: raw components → contact graph → merged components.
//!
//! Every shape is first normalized to unit radius around its bounding-box
//! center, so all thresholds below are fractions of the shape radius.

pub mod corpus;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    self, directional_hausdorff, min_distance, pca_obb, recenter, sample_surface_with, Aabb, Frame, GeometryError,
    Point3, PointCloud,
};
use crate::mesh::{MeshError, TriangleMesh};
use crate::seed::rng_for;

pub use io::{
    build_manifest, dataset_stats, export_dataset, load_raw_corpus, prepare_corpus, read_raw_shape, write_dataset,
    write_raw_shape, ComponentRecord, Dataset, DatasetManifest, DatasetStats, ShapeRecord, Split, MANIFEST_VERSION,
};

/// Points sampled per component.
pub const N_POINTS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("shape `{shape}`: {source}")]
    Geometry {
        shape: String,
        #[source]
        source: GeometryError,
    },
    #[error("shape `{shape}`: {msg}")]
    InvalidShape { shape: String, msg: String },
    #[error("{path}: {source}")]
    Mesh {
        path: String,
        #[source]
        source: MeshError,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Thresholds and sizes used by preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub n_points: usize,
    pub tau_proximity: f64,
    pub tau_size: f64,
    pub tau_hausdorff: f64,
    pub max_cc: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            n_points: N_POINTS,
            tau_proximity: 0.05,
            tau_size: 0.2,
            tau_hausdorff: 0.05,
            max_cc: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawComponent {
    pub id: String,
    pub mesh: TriangleMesh,
    pub label: Option<String>,
}

/// A shape as delivered by a repository: already split into raw components.
#[derive(Debug, Clone, PartialEq)]
pub struct RawShape {
    pub shape_id: String,
    pub category: String,
    pub components: Vec<RawComponent>,
    /// Fine-grained style classes. Evaluation only.
    pub fine_grained_labels: Option<BTreeSet<String>>,
}

impl RawShape {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |msg: String| DatasetError::InvalidShape {
            shape: self.shape_id.clone(),
            msg,
        };
        if self.components.is_empty() {
            return Err(invalid("no components".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if !seen.insert(&c.id) {
                return Err(invalid(format!("duplicate component id `{}`", c.id)));
            }
        }
        Ok(())
    }
}

/// One node of a contact graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub shape_id: String,
    /// Exactly `n_points` points with zero centroid. Values are f32-exact.
    pub cloud_centered: PointCloud,
    /// Position in the normalized object frame. Values are f32-exact.
    pub centroid: Point3,
    pub obb_diagonal: f64,
    pub surface_area: f64,
    /// Sorted raw component ids this node was built from.
    pub merged_from: Vec<String>,
    pub geometry_hash: String,
    /// Area-majority part label of the members. Evaluation only.
    pub part_label: Option<String>,
    /// Fraction of the node's area whose raw label equals `part_label`.
    pub label_agreement: f64,
}

impl Component {
    /// The cloud placed at its centroid in the normalized object frame.
    pub fn object_cloud(&self) -> PointCloud {
        self.cloud_centered.placed_at(self.centroid)
    }

    /// Key unique across a dataset.
    pub fn key(&self) -> String {
        format!("{}/{}", self.shape_id, self.id)
    }
}

/// Counters describing which merge rules fired for a shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub size_merges: usize,
    pub overlap_merges: usize,
    pub duplicate_merges: usize,
    /// Small components without a contact neighbor, merged into the nearest one.
    pub isolated_small: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeSource {
    mesh: TriangleMesh,
    label_areas: BTreeMap<String, f64>,
    total_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactGraph {
    pub shape_id: String,
    pub category: String,
    pub nodes: Vec<Component>,
    /// Unordered pairs stored as `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
    pub style_labels: Option<BTreeSet<String>>,
    pub merge_stats: MergeStats,
    // Normalized source meshes per node; empty for graphs loaded from disk.
    sources: Vec<NodeSource>,
}

impl ContactGraph {
    /// Assembles a graph from already-built components (for loaded datasets
    /// and tests). Edges are recomputed from geometry.
    pub fn from_components(
        shape_id: impl Into<String>,
        category: impl Into<String>,
        nodes: Vec<Component>,
        tau_proximity: f64,
    ) -> Self {
        let mut g = ContactGraph {
            shape_id: shape_id.into(),
            category: category.into(),
            nodes,
            edges: BTreeSet::new(),
            style_labels: None,
            merge_stats: MergeStats::default(),
            sources: Vec::new(),
        };
        g.edges = contact_edges(&g.nodes, tau_proximity);
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&j| j != i && self.has_edge(i, j))
            .collect()
    }

    /// Whether the graph keeps its source meshes (needed for merging).
    pub fn has_sources(&self) -> bool {
        self.sources.len() == self.nodes.len()
    }
}

/// Lower bound on the distance between two boxes.
fn aabb_gap(a: &Aabb, b: &Aabb) -> f64 {
    let g: Vec<f64> = (0..3)
        .map(|k| (a.min[k] - b.max[k]).max(b.min[k] - a.max[k]).max(0.0))
        .collect();
    (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
}

/// Edge `(i, j)` iff the object-frame clouds come closer than `tau`.
pub fn contact_edges(nodes: &[Component], tau: f64) -> BTreeSet<(usize, usize)> {
    let clouds: Vec<PointCloud> = nodes.iter().map(Component::object_cloud).collect();
    let boxes: Vec<Aabb> = clouds.iter().map(PointCloud::aabb).collect();
    let mut edges = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if aabb_gap(&boxes[i], &boxes[j]) > tau * (1.0 + 1e-9) {
                continue;
            }
            if min_distance(&clouds[i], &clouds[j]) < tau {
                edges.insert((i, j));
            }
        }
    }
    edges
}

fn to_f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

/// Digest of the quantized, centered vertex multiset.
pub fn geometry_hash(mesh: &TriangleMesh) -> String {
    const QUANTUM: f64 = 1e-4;
    let c = geometry::centroid(&mesh.positions);
    let mut keys: Vec<[i64; 3]> = mesh
        .positions
        .iter()
        .map(|p| [0, 1, 2].map(|k| ((p[k] - c[k]) / QUANTUM).round() as i64))
        .collect();
    keys.sort_unstable();
    let mut h = Sha256::new();
    for k in &keys {
        for v in k {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn build_node(
    shape_id: &str,
    merged_from: Vec<String>,
    source: &NodeSource,
    n_points: usize,
    seed: u64,
) -> Result<Component, GeometryError> {
    let mut labels: Vec<&str> = vec![shape_id];
    labels.extend(merged_from.iter().map(String::as_str));
    let mut rng = rng_for(seed, &labels);
    let sampled = sample_surface_with(&source.mesh, n_points, &mut rng)?;
    let (centered, c) = recenter(&sampled);
    let centroid = c.map(to_f32_exact);
    let points = centered
        .into_points()
        .into_iter()
        .map(|p| p.map(to_f32_exact))
        .collect();
    let cloud_centered = PointCloud::new(points, Frame::Centered)?;
    let obb_diagonal = pca_obb(&cloud_centered.placed_at(centroid)).diagonal;

    let (part_label, label_agreement) = match source
        .label_areas
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
    {
        Some((label, &area)) => (Some(label.clone()), area / source.total_area),
        None => (None, 0.0),
    };
    Ok(Component {
        id: merged_from.join("+"),
        shape_id: shape_id.to_string(),
        cloud_centered,
        centroid,
        obb_diagonal,
        surface_area: source.total_area,
        merged_from,
        geometry_hash: geometry_hash(&source.mesh),
        part_label,
        label_agreement,
    })
}

/// Normalizes the shape, samples every raw component and connects
/// components closer than `tau_proximity`.
pub fn build_contact_graph(shape: &RawShape, cfg: &PrepConfig, rng_seed: u64) -> Result<ContactGraph, DatasetError> {
    shape.validate()?;
    let geo_err = |source| DatasetError::Geometry {
        shape: shape.shape_id.clone(),
        source,
    };
    let all = shape.components.iter().flat_map(|c| c.mesh.positions.iter().copied());
    let norm = geometry::normalize_points(all).map_err(geo_err)?;

    let mut nodes = Vec::with_capacity(shape.components.len());
    let mut sources = Vec::with_capacity(shape.components.len());
    for raw in &shape.components {
        let mesh = raw.mesh.transformed(|p| norm.apply(p));
        let total_area = mesh.area();
        let mut label_areas = BTreeMap::new();
        if let Some(l) = &raw.label {
            label_areas.insert(l.clone(), total_area);
        }
        let source = NodeSource {
            mesh,
            label_areas,
            total_area,
        };
        nodes
            .push(build_node(&shape.shape_id, vec![raw.id.clone()], &source, cfg.n_points, rng_seed).map_err(geo_err)?);
        sources.push(source);
    }
    let edges = contact_edges(&nodes, cfg.tau_proximity);
    Ok(ContactGraph {
        shape_id: shape.shape_id.clone(),
        category: shape.category.clone(),
        nodes,
        edges,
        style_labels: shape.fine_grained_labels.clone(),
        merge_stats: MergeStats::default(),
        sources,
    })
}

fn merge_nodes(g: &mut ContactGraph, members: &[usize], cfg: &PrepConfig, seed: u64) -> Result<(), GeometryError> {
    let mut members = members.to_vec();
    members.sort_unstable();
    members.dedup();
    let mut mesh = TriangleMesh::default();
    let mut label_areas: BTreeMap<String, f64> = BTreeMap::new();
    let mut total_area = 0.0;
    let mut merged_from = Vec::new();
    for &m in &members {
        let s = &g.sources[m];
        mesh.append(&s.mesh);
        for (l, a) in &s.label_areas {
            *label_areas.entry(l.clone()).or_default() += a;
        }
        total_area += s.total_area;
        merged_from.extend(g.nodes[m].merged_from.iter().cloned());
    }
    merged_from.sort();
    let source = NodeSource {
        mesh,
        label_areas,
        total_area,
    };
    let node = build_node(&g.shape_id, merged_from, &source, cfg.n_points, seed)?;
    let keep = members[0];
    for &m in members[1..].iter().rev() {
        g.nodes.remove(m);
        g.sources.remove(m);
    }
    g.nodes[keep] = node;
    g.sources[keep] = source;
    g.edges = contact_edges(&g.nodes, cfg.tau_proximity);
    Ok(())
}

fn find_small(g: &ContactGraph, cfg: &PrepConfig) -> Option<usize> {
    if g.nodes.len() < 2 {
        return None;
    }
    g.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.obb_diagonal < cfg.tau_size)
        .min_by(|a, b| a.1.obb_diagonal.total_cmp(&b.1.obb_diagonal))
        .map(|(i, _)| i)
}

fn overlapping_pair(g: &ContactGraph, cfg: &PrepConfig) -> Option<(usize, usize)> {
    let clouds: Vec<PointCloud> = g.nodes.iter().map(Component::object_cloud).collect();
    let boxes: Vec<Aabb> = clouds.iter().map(PointCloud::aabb).collect();
    let tau = cfg.tau_hausdorff;
    // h(a→b) < tau requires a's box to sit inside b's box grown by tau.
    let may_cover = |a: &Aabb, b: &Aabb| {
        let slack = tau * (1.0 + 1e-9);
        (0..3).all(|k| a.min[k] >= b.min[k] - slack && a.max[k] <= b.max[k] + slack)
    };
    for i in 0..g.nodes.len() {
        for j in i + 1..g.nodes.len() {
            if may_cover(&boxes[i], &boxes[j]) && directional_hausdorff(&clouds[i], &clouds[j]) < tau {
                return Some((i, j));
            }
            if may_cover(&boxes[j], &boxes[i]) && directional_hausdorff(&clouds[j], &clouds[i]) < tau {
                return Some((i, j));
            }
        }
    }
    None
}

fn duplicate_group(g: &ContactGraph) -> Option<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        groups.entry(&n.geometry_hash).or_default().push(i);
    }
    groups.into_values().filter(|v| v.len() > 1).min_by_key(|v| v[0])
}

/// Applies the size, overlap and duplicate rules until none fires.
///
/// * size: a node whose PCA box diagonal is below `tau_size` joins its
///   largest contact neighbor (or the nearest node if it has none);
/// * overlap: two nodes with directional Hausdorff below `tau_hausdorff` in
///   either direction become one;
/// * duplicates: nodes with equal geometry hash become one.
///
/// Merged nodes are resampled from the union of their meshes and edges are
/// recomputed after every merge.
pub fn merge_components(mut g: ContactGraph, cfg: &PrepConfig, rng_seed: u64) -> Result<ContactGraph, DatasetError> {
    if !g.has_sources() {
        return Err(DatasetError::InvalidShape {
            shape: g.shape_id.clone(),
            msg: "merging needs the source meshes".into(),
        });
    }
    let geo_err = |shape: &str, source| DatasetError::Geometry {
        shape: shape.to_string(),
        source,
    };
    loop {
        if let Some(i) = find_small(&g, cfg) {
            let neighbors = g.neighbors(i);
            let target = if neighbors.is_empty() {
                g.merge_stats.isolated_small += 1;
                let ci = g.nodes[i].object_cloud();
                (0..g.nodes.len())
                    .filter(|&j| j != i)
                    .map(|j| (j, min_distance(&ci, &g.nodes[j].object_cloud())))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(j, _)| j)
                    .expect("at least two nodes")
            } else {
                *neighbors
                    .iter()
                    .max_by(|&&a, &&b| {
                        g.nodes[a]
                            .obb_diagonal
                            .total_cmp(&g.nodes[b].obb_diagonal)
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty")
            };
            merge_nodes(&mut g, &[i, target], cfg, rng_seed).map_err(|e| geo_err(&g.shape_id, e))?;
            g.merge_stats.size_merges += 1;
            continue;
        }
        if let Some((i, j)) = overlapping_pair(&g, cfg) {
            merge_nodes(&mut g, &[i, j], cfg, rng_seed).map_err(|e| geo_err(&g.shape_id, e))?;
            g.merge_stats.overlap_merges += 1;
            continue;
        }
        if let Some(group) = duplicate_group(&g) {
            merge_nodes(&mut g, &group, cfg, rng_seed).map_err(|e| geo_err(&g.shape_id, e))?;
            g.merge_stats.duplicate_merges += 1;
            continue;
        }
        return Ok(g);
    }
}

/// `build_contact_graph` followed by `merge_components`.
pub fn prepare_shape(shape: &RawShape, cfg: &PrepConfig, rng_seed: u64) -> Result<ContactGraph, DatasetError> {
    let g = build_contact_graph(shape, cfg, rng_seed)?;
    merge_components(g, cfg, rng_seed)
}
