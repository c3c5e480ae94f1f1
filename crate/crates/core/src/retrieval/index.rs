use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::dataset::{Component, ContactGraph};
use crate::nn::EmbeddingNet;
use crate::train::component_input;

/// One database component with its embedding coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    /// `shape/component`, unique across the index.
    pub key: String,
    pub category: String,
    pub component: Component,
    pub coord: Vec<f64>,
}

/// Serializable summary of an entry, without geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub key: String,
    pub shape_id: String,
    pub category: String,
    pub part_label: Option<String>,
    pub surface_area: f64,
}

impl IndexEntry {
    pub fn info(&self) -> EntryInfo {
        EntryInfo {
            key: self.key.clone(),
            shape_id: self.component.shape_id.clone(),
            category: self.category.clone(),
            part_label: self.component.part_label.clone(),
            surface_area: self.component.surface_area,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-neighbor index over embedding coordinates.
///
/// A linear scan: at 50 dimensions space-partitioning trees degrade to a
/// scan anyway, and pools here hold at most tens of thousands of entries.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    /// Embeds every component of the given graphs that passes `keep`.
    pub fn build<'a>(
        f: &EmbeddingNet,
        graphs: impl IntoIterator<Item = &'a ContactGraph>,
        keep: impl Fn(&ContactGraph) -> bool,
    ) -> Result<Self, RetrievalError> {
        let n = f.config().n_points;
        let mut index = Self::default();
        for g in graphs.into_iter().filter(|g| keep(g)) {
            for c in &g.nodes {
                let coord = f.embed(&component_input(c, n)?)?;
                index.push(IndexEntry {
                    key: c.key(),
                    category: g.category.clone(),
                    component: c.clone(),
                    coord,
                })?;
            }
        }
        if index.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        Ok(index)
    }

    /// Builds an index from precomputed coordinates.
    pub fn from_entries(entries: Vec<IndexEntry>) -> Result<Self, RetrievalError> {
        let mut index = Self::default();
        for e in entries {
            index.push(e)?;
        }
        Ok(index)
    }

    /// Adds one entry. Keys must be unique and dimensions consistent.
    pub fn push(&mut self, e: IndexEntry) -> Result<(), RetrievalError> {
        if let Some(first) = self.entries.first() {
            if first.coord.len() != e.coord.len() {
                return Err(RetrievalError::Dimension {
                    expected: first.coord.len(),
                    got: e.coord.len(),
                });
            }
        }
        if self.position(&e.key).is_some() {
            return Err(RetrievalError::DuplicateKey(e.key));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.key == key)
    }

    /// The `k` entries closest to `query` among those passing `allowed`,
    /// as `(index, distance)` sorted by distance then index.
    pub fn knn_filtered(&self, query: &[f64], k: usize, allowed: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..self.entries.len())
            .filter(|&i| allowed(i))
            .map(|i| (i, sq_dist(query, &self.entries[i].coord)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < all.len() {
            all.select_nth_unstable_by(k, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
    }

    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.knn_filtered(query, k, |_| true)
    }

    pub fn nearest_filtered(&self, query: &[f64], allowed: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        self.knn_filtered(query, 1, allowed).into_iter().next()
    }
}
