//! Raw shape folders in, processed dataset out.
//!
//! Raw input: one folder per shape holding `shape.json` and one triangle-soup
//! file per raw component.
//!
//! Processed output: `manifest.json` plus `components.bin`, little endian:
//!
//! ```text
//! magic         8 bytes  "PFCOMP01"
//! n_points      u32
//! n_shapes      u32
//! n_components  u32
//! offsets       n_shapes × (u32 first_record, u32 record_count)
//! records       n_components × {
//!                   u32 id_len, id bytes ("shape_id/component_id"),
//!                   f32 × 3 centroid,
//!                   f32 × 3·n_points centered points
//!               }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare_shape, Component, ContactGraph, DatasetError, MergeStats, PrepConfig, RawComponent, RawShape};
use crate::geometry::{Frame, PointCloud};
use crate::mesh::TriangleMesh;
use crate::seed::rng_for;

pub const MANIFEST_VERSION: u32 = 1;
const BIN_MAGIC: &[u8; 8] = b"PFCOMP01";
/// Categories with fewer admitted shapes than this get a manifest warning.
const MIN_PER_CATEGORY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: String,
    pub merged_from: Vec<String>,
    pub obb_diagonal: f64,
    pub surface_area: f64,
    pub geometry_hash: String,
    pub part_label: Option<String>,
    pub label_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub shape_id: String,
    pub category: String,
    pub split: Split,
    pub style_labels: Option<BTreeSet<String>>,
    pub components: Vec<ComponentRecord>,
    pub edges: Vec<(usize, usize)>,
    pub merge_stats: MergeStats,
}

/// Admitted shape counts keyed by category and component count, plus
/// discarded counts keyed the same way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub admitted: BTreeMap<String, BTreeMap<usize, usize>>,
    pub discarded: BTreeMap<String, BTreeMap<usize, usize>>,
}

impl DatasetStats {
    pub fn total_admitted(&self) -> usize {
        self.admitted.values().flat_map(|h| h.values()).sum()
    }

    pub fn total_discarded(&self) -> usize {
        self.discarded.values().flat_map(|h| h.values()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub split_ratio: f64,
    pub config: PrepConfig,
    pub shapes: Vec<ShapeRecord>,
    pub stats: DatasetStats,
    pub warnings: Vec<String>,
}

/// Histogram of component counts over the admitted shapes, recomputed from
/// the shape records, with the manifest's discarded counts.
pub fn dataset_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut admitted: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    for s in &manifest.shapes {
        *admitted
            .entry(s.category.clone())
            .or_default()
            .entry(s.components.len())
            .or_default() += 1;
    }
    DatasetStats {
        admitted,
        discarded: manifest.stats.discarded.clone(),
    }
}

fn record_of(c: &Component) -> ComponentRecord {
    ComponentRecord {
        id: c.id.clone(),
        merged_from: c.merged_from.clone(),
        obb_diagonal: c.obb_diagonal,
        surface_area: c.surface_area,
        geometry_hash: c.geometry_hash.clone(),
        part_label: c.part_label.clone(),
        label_agreement: c.label_agreement,
    }
}

/// Filters graphs by size, splits each category deterministically and
/// builds the manifest. Returns the admitted graphs in manifest order.
pub fn build_manifest(
    graphs: Vec<ContactGraph>,
    cfg: &PrepConfig,
    split_ratio: f64,
    rng_seed: u64,
) -> (DatasetManifest, Vec<ContactGraph>) {
    let mut stats = DatasetStats::default();
    let mut by_category: BTreeMap<String, Vec<ContactGraph>> = BTreeMap::new();
    for g in graphs {
        let n = g.nodes.len();
        if n < 2 || n > cfg.max_cc {
            *stats
                .discarded
                .entry(g.category.clone())
                .or_default()
                .entry(n)
                .or_default() += 1;
        } else {
            by_category.entry(g.category.clone()).or_default().push(g);
        }
    }
    let mut warnings = Vec::new();
    let mut shapes = Vec::new();
    let mut admitted = Vec::new();
    for (category, mut graphs) in by_category {
        if graphs.len() < MIN_PER_CATEGORY {
            warnings.push(format!(
                "category `{category}` has only {} admitted shapes",
                graphs.len()
            ));
        }
        graphs.sort_by(|a, b| a.shape_id.cmp(&b.shape_id));
        graphs.shuffle(&mut rng_for(rng_seed, &["split", &category]));
        let n_train = (graphs.len() as f64 * split_ratio).round() as usize;
        for (k, g) in graphs.into_iter().enumerate() {
            let split = if k < n_train { Split::Train } else { Split::Test };
            *stats
                .admitted
                .entry(category.clone())
                .or_default()
                .entry(g.nodes.len())
                .or_default() += 1;
            shapes.push(ShapeRecord {
                shape_id: g.shape_id.clone(),
                category: g.category.clone(),
                split,
                style_labels: g.style_labels.clone(),
                components: g.nodes.iter().map(record_of).collect(),
                edges: g.edges.iter().copied().collect(),
                merge_stats: g.merge_stats,
            });
            admitted.push(g);
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: rng_seed,
        split_ratio,
        config: *cfg,
        shapes,
        stats,
        warnings,
    };
    (manifest, admitted)
}

fn write_components(w: &mut impl Write, n_points: usize, graphs: &[ContactGraph]) -> std::io::Result<()> {
    let n_components: usize = graphs.iter().map(|g| g.nodes.len()).sum();
    w.write_all(BIN_MAGIC)?;
    for v in [n_points, graphs.len(), n_components] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let mut first = 0u32;
    for g in graphs {
        w.write_all(&first.to_le_bytes())?;
        w.write_all(&(g.nodes.len() as u32).to_le_bytes())?;
        first += g.nodes.len() as u32;
    }
    for g in graphs {
        for c in &g.nodes {
            let id = c.key();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in c.centroid {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
            for p in c.cloud_centered.points() {
                for x in p {
                    w.write_all(&(*x as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Builds the manifest and writes the dataset into `out_dir`.
pub fn export_dataset(
    graphs: Vec<ContactGraph>,
    cfg: &PrepConfig,
    split_ratio: f64,
    rng_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let (manifest, admitted) = build_manifest(graphs, cfg, split_ratio, rng_seed);
    write_dataset(out_dir, &manifest, &admitted)?;
    Ok(manifest)
}

/// Writes `manifest.json` and `components.bin`; `graphs` must be the
/// admitted graphs in manifest order.
pub fn write_dataset(out_dir: &Path, manifest: &DatasetManifest, graphs: &[ContactGraph]) -> Result<(), DatasetError> {
    std::fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(out_dir.join("manifest.json"), json)?;
    let mut bin = std::io::BufWriter::new(std::fs::File::create(out_dir.join("components.bin"))?);
    write_components(&mut bin, manifest.config.n_points, graphs)?;
    bin.flush()?;
    Ok(())
}

struct BinReader<R> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b) as f64)
    }

    fn bytes(&mut self, n: usize) -> std::io::Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
}

/// A processed dataset loaded back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Graphs in manifest order.
    pub graphs: Vec<ContactGraph>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DatasetError::Format(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let file = std::fs::File::open(dir.join("components.bin"))?;
        let mut r = BinReader {
            inner: std::io::BufReader::new(file),
        };
        let bad = |msg: String| DatasetError::Format(format!("components.bin: {msg}"));
        if r.bytes(8)? != BIN_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let n_points = r.u32()? as usize;
        let n_shapes = r.u32()? as usize;
        let _n_components = r.u32()?;
        if n_points != manifest.config.n_points || n_shapes != manifest.shapes.len() {
            return Err(bad(format!(
                "header ({n_points} points, {n_shapes} shapes) disagrees with manifest"
            )));
        }
        let mut counts = Vec::with_capacity(n_shapes);
        for _ in 0..n_shapes {
            let _first = r.u32()?;
            counts.push(r.u32()? as usize);
        }
        let mut graphs = Vec::with_capacity(n_shapes);
        for (rec, &count) in manifest.shapes.iter().zip(&counts) {
            if count != rec.components.len() {
                return Err(bad(format!("shape `{}` component count mismatch", rec.shape_id)));
            }
            let mut nodes = Vec::with_capacity(count);
            for c in &rec.components {
                let id_len = r.u32()? as usize;
                let id = String::from_utf8(r.bytes(id_len)?).map_err(|_| bad("id is not UTF-8".into()))?;
                let expected = format!("{}/{}", rec.shape_id, c.id);
                if id != expected {
                    return Err(bad(format!("expected record `{expected}`, found `{id}`")));
                }
                let centroid = [r.f32()?, r.f32()?, r.f32()?];
                let mut points = Vec::with_capacity(n_points);
                for _ in 0..n_points {
                    points.push([r.f32()?, r.f32()?, r.f32()?]);
                }
                let cloud_centered =
                    PointCloud::new(points, Frame::Centered).map_err(|e| bad(format!("record `{id}`: {e}")))?;
                nodes.push(Component {
                    id: c.id.clone(),
                    shape_id: rec.shape_id.clone(),
                    cloud_centered,
                    centroid,
                    obb_diagonal: c.obb_diagonal,
                    surface_area: c.surface_area,
                    merged_from: c.merged_from.clone(),
                    geometry_hash: c.geometry_hash.clone(),
                    part_label: c.part_label.clone(),
                    label_agreement: c.label_agreement,
                });
            }
            graphs.push(ContactGraph {
                shape_id: rec.shape_id.clone(),
                category: rec.category.clone(),
                nodes,
                edges: rec.edges.iter().copied().collect(),
                style_labels: rec.style_labels.clone(),
                merge_stats: rec.merge_stats,
                sources: Vec::new(),
            });
        }
        Ok(Self { manifest, graphs })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ContactGraph> {
        self.manifest
            .shapes
            .iter()
            .zip(&self.graphs)
            .filter(move |(r, _)| r.split == split)
            .map(|(_, g)| g)
    }

    pub fn train(&self) -> Vec<&ContactGraph> {
        self.split(Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&ContactGraph> {
        self.split(Split::Test).collect()
    }

    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.manifest.shapes.iter().map(|s| &s.category).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeFileComponent {
    id: String,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeFile {
    shape_id: String,
    category: String,
    components: Vec<ShapeFileComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine_grained_labels: Option<BTreeSet<String>>,
}

pub fn read_raw_shape(dir: &Path) -> Result<RawShape, DatasetError> {
    let sf: ShapeFile = serde_json::from_str(&std::fs::read_to_string(dir.join("shape.json"))?)?;
    let mut components = Vec::with_capacity(sf.components.len());
    for c in sf.components {
        let path = dir.join(&c.file);
        let mesh = TriangleMesh::load(&path).map_err(|source| DatasetError::Mesh {
            path: path.display().to_string(),
            source,
        })?;
        components.push(RawComponent {
            id: c.id,
            mesh,
            label: c.label,
        });
    }
    let shape = RawShape {
        shape_id: sf.shape_id,
        category: sf.category,
        components,
        fine_grained_labels: sf.fine_grained_labels,
    };
    shape.validate()?;
    Ok(shape)
}

pub fn write_raw_shape(dir: &Path, shape: &RawShape) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut components = Vec::new();
    for (k, c) in shape.components.iter().enumerate() {
        let file = format!("c{k:03}.tri");
        c.mesh.save(dir.join(&file)).map_err(|source| DatasetError::Mesh {
            path: dir.join(&file).display().to_string(),
            source,
        })?;
        components.push(ShapeFileComponent {
            id: c.id.clone(),
            file,
            label: c.label.clone(),
        });
    }
    let sf = ShapeFile {
        shape_id: shape.shape_id.clone(),
        category: shape.category.clone(),
        components,
        fine_grained_labels: shape.fine_grained_labels.clone(),
    };
    std::fs::write(dir.join("shape.json"), serde_json::to_string_pretty(&sf)? + "\n")?;
    Ok(())
}

/// Reads every shape folder under `dir`, in name order.
pub fn load_raw_corpus(dir: &Path) -> Result<Vec<RawShape>, DatasetError> {
    let mut dirs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("shape.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_raw_shape(d)).collect()
}

/// Prepares every shape in parallel. Shapes that fail are skipped and
/// reported as warnings; output order follows input order.
pub fn prepare_corpus(shapes: &[RawShape], cfg: &PrepConfig, rng_seed: u64) -> (Vec<ContactGraph>, Vec<String>) {
    let results: Vec<_> = shapes.par_iter().map(|s| prepare_shape(s, cfg, rng_seed)).collect();
    let mut graphs = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        match r {
            Ok(g) => graphs.push(g),
            Err(e) => warnings.push(e.to_string()),
        }
    }
    (graphs, warnings)
}
