//! Interactive assembly sessions, independent of any transport.
//!
//! A session's suggestions are a pure function of its category, placed
//! parts, seed and suggestion settings, so undo and import only need the
//! placement list.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use partforge::dataset::{ContactGraph, Dataset, DatasetError};
use partforge::eval::category_pools;
use partforge::geometry::{norm, Point3};
use partforge::retrieval::{
    suggest, Assembly, EmbeddingIndex, EntryInfo, IndexEntry, Models, PlacedPart, RetrievalError, SuggestConfig,
    SuggestMode,
};
use partforge::seed::rng_for;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// User placements must lie within this distance of the origin.
pub const MAX_PLACEMENT_RADIUS: f64 = 2.0;
/// Request ids remembered per session for retry deduplication.
pub const DEDUPE_WINDOW: usize = 64;
pub const DOCUMENT_FORMAT: &str = "partforge-assembly/1";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("component `{key}` belongs to `{actual}`, not `{expected}`")]
    WrongCategory {
        key: String,
        expected: String,
        actual: String,
    },
    #[error("stale revision {sent}; the session is at {current}")]
    Conflict { sent: u64, current: u64 },
    #[error("candidate {index} out of range ({len} suggestions)")]
    BadCandidate { index: usize, len: usize },
    #[error("invalid placement: {0}")]
    BadPlacement(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("invalid document: {0}")]
    BadDocument(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// Trained models plus one immutable component index per category.
#[derive(Debug)]
pub struct Catalog {
    pub models: Models,
    pools: BTreeMap<String, EmbeddingIndex>,
}

impl Catalog {
    pub fn new(models: Models, graphs: &[&ContactGraph]) -> Result<Self> {
        let pools = category_pools(&models.f, graphs)?;
        Ok(Self { models, pools })
    }

    /// Loads models first so missing checkpoints are reported before the
    /// dataset is read.
    pub fn load(models_dir: &Path, data_dir: &Path) -> Result<Self> {
        let models = Models::load(models_dir)?;
        let ds = Dataset::load(data_dir)?;
        let graphs: Vec<&ContactGraph> = ds.graphs.iter().collect();
        Self::new(models, &graphs)
    }

    pub fn categories(&self) -> Vec<String> {
        self.pools.keys().cloned().collect()
    }

    pub fn pool(&self, category: &str) -> Result<&EmbeddingIndex> {
        self.pools
            .get(category)
            .ok_or_else(|| SessionError::UnknownCategory(category.to_string()))
    }

    pub fn find(&self, key: &str) -> Option<&IndexEntry> {
        self.pools.values().find_map(|p| p.position(key).map(|i| p.entry(i)))
    }

    /// Component summaries, optionally for one category only.
    pub fn list(&self, category: Option<&str>) -> Result<Vec<EntryInfo>> {
        match category {
            Some(c) => Ok(self.pool(c)?.entries().iter().map(IndexEntry::info).collect()),
            None => Ok(self
                .pools
                .values()
                .flat_map(|p| p.entries().iter().map(IndexEntry::info))
                .collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.pools.values().map(EmbeddingIndex::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementSource {
    Seed,
    Predicted,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedRecord {
    pub key: String,
    pub position: Point3,
    pub source: PlacementSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionView {
    pub key: String,
    pub part_label: Option<String>,
    pub log_score: f64,
    pub score: f64,
    pub placement: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub mode: SuggestMode,
    pub n_candidates: usize,
    /// Mixture draws per round in sample mode.
    pub draws: usize,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            mode: SuggestMode::Sample,
            n_candidates: 8,
            draws: 16,
        }
    }
}

impl SessionSettings {
    fn suggest_config(&self) -> SuggestConfig {
        SuggestConfig {
            n_candidates: self.n_candidates,
            mode: self.mode,
            draws: self.draws.max(self.n_candidates),
        }
    }
}

/// The wire view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub category: String,
    pub rng_seed: u64,
    pub settings: SessionSettings,
    /// Bumped by every mutation, undo included.
    pub revision: u64,
    pub placed: Vec<PlacedRecord>,
    pub suggestions: Vec<SuggestionView>,
    pub undo_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub category: String,
    #[serde(default)]
    pub seed_component: Option<String>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub settings: Option<SessionSettings>,
}

/// Exported assembly: enough to replay the session exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyDocument {
    pub format: String,
    pub category: String,
    pub rng_seed: u64,
    pub settings: SessionSettings,
    pub parts: Vec<DocumentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentPart {
    pub key: String,
    pub shape_id: String,
    pub part_label: Option<String>,
    pub position: Point3,
    pub source: PlacementSource,
}

impl AssemblyDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    category: String,
    rng_seed: u64,
    settings: SessionSettings,
    revision: u64,
    placed: Vec<PlacedRecord>,
    suggestions: Vec<SuggestionView>,
    undo: Vec<Vec<PlacedRecord>>,
    seen: VecDeque<(String, SessionState)>,
}

fn check_position(p: Point3) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(SessionError::BadPlacement("non-finite coordinate".into()));
    }
    if norm(p) > MAX_PLACEMENT_RADIUS {
        return Err(SessionError::BadPlacement(format!(
            "|p| = {:.3} exceeds {MAX_PLACEMENT_RADIUS}",
            norm(p)
        )));
    }
    Ok(())
}

fn rebuild(catalog: &Catalog, placed: &[PlacedRecord], rng_seed: u64) -> Result<Assembly> {
    let mut parts = placed.iter().map(|p| -> Result<PlacedPart> {
        let e = catalog
            .find(&p.key)
            .ok_or_else(|| SessionError::UnknownComponent(p.key.clone()))?;
        Ok(PlacedPart {
            component: e.component.clone(),
            position: p.position,
        })
    });
    let first = parts
        .next()
        .ok_or_else(|| SessionError::BadDocument("no parts".into()))??;
    let mut asm = Assembly::new(first, rng_seed);
    for p in parts {
        asm.parts.push(p?);
    }
    Ok(asm)
}

fn compute_suggestions(
    catalog: &Catalog,
    category: &str,
    placed: &[PlacedRecord],
    rng_seed: u64,
    settings: &SessionSettings,
) -> Result<Vec<SuggestionView>> {
    let pool = catalog.pool(category)?;
    let asm = rebuild(catalog, placed, rng_seed)?;
    let keys: Vec<&str> = placed.iter().map(|p| p.key.as_str()).collect();
    let mut rng = rng_for(rng_seed, &["suggest", &keys.join("|")]);
    let m = &catalog.models;
    let set = suggest(&m.g, Some(&m.h), pool, &asm, &settings.suggest_config(), &mut rng)?;
    Ok(set
        .items
        .into_iter()
        .map(|s| SuggestionView {
            part_label: pool.entry(s.entry).component.part_label.clone(),
            key: s.key,
            log_score: s.log_score,
            score: s.score,
            placement: s.placement.expect("placement network given"),
        })
        .collect())
}

impl Session {
    pub fn create(catalog: &Catalog, id: String, req: &CreateSession) -> Result<Self> {
        let pool = catalog.pool(&req.category)?;
        let entry = match &req.seed_component {
            Some(key) => {
                let e = catalog
                    .find(key)
                    .ok_or_else(|| SessionError::UnknownComponent(key.clone()))?;
                if e.category != req.category {
                    return Err(SessionError::WrongCategory {
                        key: key.clone(),
                        expected: req.category.clone(),
                        actual: e.category.clone(),
                    });
                }
                e
            }
            None => {
                let i = rng_for(req.rng_seed, &["seed-component"]).random_range(0..pool.len());
                pool.entry(i)
            }
        };
        let placed = vec![PlacedRecord {
            key: entry.key.clone(),
            position: entry.component.centroid,
            source: PlacementSource::Seed,
        }];
        Self::from_placed(
            catalog,
            id,
            req.category.clone(),
            req.rng_seed,
            req.settings.unwrap_or_default(),
            placed,
        )
    }

    fn from_placed(
        catalog: &Catalog,
        id: String,
        category: String,
        rng_seed: u64,
        settings: SessionSettings,
        placed: Vec<PlacedRecord>,
    ) -> Result<Self> {
        if settings.n_candidates == 0 {
            return Err(SessionError::BadDocument("n_candidates must be positive".into()));
        }
        let suggestions = compute_suggestions(catalog, &category, &placed, rng_seed, &settings)?;
        Ok(Self {
            id,
            category,
            rng_seed,
            settings,
            revision: 0,
            placed,
            suggestions,
            undo: Vec::new(),
            seen: VecDeque::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn placed(&self) -> &[PlacedRecord] {
        &self.placed
    }

    pub fn suggestions(&self) -> &[SuggestionView] {
        &self.suggestions
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session_id: self.id.clone(),
            category: self.category.clone(),
            rng_seed: self.rng_seed,
            settings: self.settings,
            revision: self.revision,
            placed: self.placed.clone(),
            suggestions: self.suggestions.clone(),
            undo_depth: self.undo.len(),
        }
    }

    /// Runs a mutation under the revision check and request-id dedupe. A
    /// repeated request id returns the state its first attempt produced.
    fn mutate(
        &mut self,
        catalog: &Catalog,
        revision: u64,
        request_id: Option<&str>,
        op: impl FnOnce(&Self) -> Result<(Vec<PlacedRecord>, bool)>,
    ) -> Result<SessionState> {
        if let Some(rid) = request_id {
            if let Some((_, s)) = self.seen.iter().find(|(r, _)| r == rid) {
                return Ok(s.clone());
            }
        }
        if revision != self.revision {
            return Err(SessionError::Conflict {
                sent: revision,
                current: self.revision,
            });
        }
        let (placed, push_undo) = op(self)?;
        let suggestions = compute_suggestions(catalog, &self.category, &placed, self.rng_seed, &self.settings)?;
        let previous = std::mem::replace(&mut self.placed, placed);
        if push_undo {
            self.undo.push(previous);
        } else {
            self.undo.pop();
        }
        self.suggestions = suggestions;
        self.revision += 1;
        let state = self.state();
        if let Some(rid) = request_id {
            if self.seen.len() == DEDUPE_WINDOW {
                self.seen.pop_front();
            }
            self.seen.push_back((rid.to_string(), state.clone()));
        }
        Ok(state)
    }

    fn candidate(&self, index: usize) -> Result<&SuggestionView> {
        self.suggestions.get(index).ok_or(SessionError::BadCandidate {
            index,
            len: self.suggestions.len(),
        })
    }

    /// Places suggestion `index` at its predicted position.
    pub fn choose(
        &mut self,
        catalog: &Catalog,
        revision: u64,
        index: usize,
        request_id: Option<&str>,
    ) -> Result<SessionState> {
        self.mutate(catalog, revision, request_id, |s| {
            let c = s.candidate(index)?;
            let mut placed = s.placed.clone();
            placed.push(PlacedRecord {
                key: c.key.clone(),
                position: c.placement,
                source: PlacementSource::Predicted,
            });
            Ok((placed, true))
        })
    }

    /// Places suggestion `index` at a user-given position.
    pub fn override_place(
        &mut self,
        catalog: &Catalog,
        revision: u64,
        index: usize,
        position: Point3,
        request_id: Option<&str>,
    ) -> Result<SessionState> {
        self.mutate(catalog, revision, request_id, |s| {
            check_position(position)?;
            let c = s.candidate(index)?;
            let mut placed = s.placed.clone();
            placed.push(PlacedRecord {
                key: c.key.clone(),
                position,
                source: if position == c.placement {
                    PlacementSource::Predicted
                } else {
                    PlacementSource::Override
                },
            });
            Ok((placed, true))
        })
    }

    /// Removes the last placement.
    pub fn undo(&mut self, catalog: &Catalog, revision: u64, request_id: Option<&str>) -> Result<SessionState> {
        self.mutate(catalog, revision, request_id, |s| {
            let prev = s.undo.last().ok_or(SessionError::NothingToUndo)?;
            Ok((prev.clone(), false))
        })
    }

    pub fn export(&self, catalog: &Catalog) -> Result<AssemblyDocument> {
        let parts = self
            .placed
            .iter()
            .map(|p| {
                let e = catalog
                    .find(&p.key)
                    .ok_or_else(|| SessionError::UnknownComponent(p.key.clone()))?;
                Ok(DocumentPart {
                    key: p.key.clone(),
                    shape_id: e.component.shape_id.clone(),
                    part_label: e.component.part_label.clone(),
                    position: p.position,
                    source: p.source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AssemblyDocument {
            format: DOCUMENT_FORMAT.into(),
            category: self.category.clone(),
            rng_seed: self.rng_seed,
            settings: self.settings,
            parts,
        })
    }

    /// Every stored point of every placed part, with its part index.
    pub fn merged_cloud(&self, catalog: &Catalog) -> Result<Vec<(Point3, u32)>> {
        let asm = rebuild(catalog, &self.placed, self.rng_seed)?;
        Ok(asm
            .parts
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                p.component
                    .cloud_centered
                    .placed_at(p.position)
                    .into_points()
                    .into_iter()
                    .map(move |q| (q, i as u32))
            })
            .collect())
    }

    /// Replays a document. The undo stack holds every prefix of the parts.
    pub fn import(catalog: &Catalog, id: String, doc: &AssemblyDocument) -> Result<Self> {
        if doc.format != DOCUMENT_FORMAT {
            return Err(SessionError::BadDocument(format!(
                "unsupported format `{}`",
                doc.format
            )));
        }
        catalog.pool(&doc.category)?;
        let mut keys = std::collections::BTreeSet::new();
        for p in &doc.parts {
            if !keys.insert(p.key.as_str()) {
                return Err(SessionError::BadDocument(format!("`{}` placed twice", p.key)));
            }
            let e = catalog
                .find(&p.key)
                .ok_or_else(|| SessionError::UnknownComponent(p.key.clone()))?;
            if e.category != doc.category {
                return Err(SessionError::WrongCategory {
                    key: p.key.clone(),
                    expected: doc.category.clone(),
                    actual: e.category.clone(),
                });
            }
            if p.source != PlacementSource::Seed {
                check_position(p.position)?;
            }
        }
        let placed: Vec<PlacedRecord> = doc
            .parts
            .iter()
            .map(|p| PlacedRecord {
                key: p.key.clone(),
                position: p.position,
                source: p.source,
            })
            .collect();
        let mut s = Self::from_placed(catalog, id, doc.category.clone(), doc.rng_seed, doc.settings, placed)?;
        s.undo = (1..s.placed.len()).map(|n| s.placed[..n].to_vec()).collect();
        Ok(s)
    }
}
