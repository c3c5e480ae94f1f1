//! Retrieval and placement benchmarks.
//!
//! Queries are built from held-out shapes. A backend sees only geometry: the
//! partial assembly cloud and the id of the shape whose parts it must not
//! return. Labels stay with the harness.
//!
//! Average precision at `k` for a binary relevance list `r_1..r_k` is
//! `AP = (1 / H) Σ_{i : r_i} P(i)` where `H` is the number of hits and
//! `P(i)` the precision of the first `i` results; `AP = 0` without hits.
//! Geometric distance is the symmetric Hausdorff distance between the
//! retrieved and the held-out part, both centered at their centroids, in
//! the unit-radius shape frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Component, ContactGraph};
use crate::geometry::{symmetric_hausdorff, Point3, PointCloud};
use crate::losses::placement_error;
use crate::nn::{PlacementNet, RetrievalNet};
use crate::retrieval::{rank_candidates, Assembly, EmbeddingIndex, PlacedPart, RetrievalError, SuggestConfig};
use crate::seed::{derive_seed, rng_for};
use crate::train::{epoch_triplet, trainable, TripletSampler};

/// Minimum label agreement for a component's label to count.
pub const LABEL_AGREEMENT: f64 = 0.8;

/// Average precision of a ranked relevance list.
pub fn average_precision(hits: &[bool]) -> f64 {
    let mut found = 0usize;
    let mut total = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            found += 1;
            total += found as f64 / (i + 1) as f64;
        }
    }
    if found == 0 {
        0.0
    } else {
        total / found as f64
    }
}

/// Subclass sets match when they share any element.
pub fn styles_overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
    a.intersection(b).next().is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// The shape with one part removed.
    AllExceptOne,
    /// A single part of the shape.
    Single,
}

#[derive(Debug, Clone)]
pub struct BenchmarkQuery {
    pub shape_id: String,
    pub category: String,
    pub kind: QueryKind,
    /// Node indices forming the query assembly.
    pub members: Vec<usize>,
    /// The removed part, for [`QueryKind::AllExceptOne`].
    pub held_out: Option<Component>,
    pub x: PointCloud,
    pub styles: Option<BTreeSet<String>>,
}

impl BenchmarkQuery {
    /// Label of the held-out part when it is trustworthy.
    pub fn label(&self) -> Option<&str> {
        let c = self.held_out.as_ref()?;
        (c.label_agreement >= LABEL_AGREEMENT).then_some(c.part_label.as_deref()?)
    }
}

/// One query per shape with at least two parts; the choice of removed (or
/// kept) part is a pure function of `seed` and the shape id.
pub fn build_queries(
    graphs: &[&ContactGraph],
    kind: QueryKind,
    n_points: usize,
    seed: u64,
) -> Result<Vec<BenchmarkQuery>, RetrievalError> {
    let mut out = Vec::new();
    for g in graphs.iter().filter(|g| g.len() >= 2) {
        let mut rng = rng_for(seed, &["query", &format!("{kind:?}"), &g.shape_id]);
        let pick = rng.random_range(0..g.len());
        let members: Vec<usize> = match kind {
            QueryKind::AllExceptOne => (0..g.len()).filter(|&i| i != pick).collect(),
            QueryKind::Single => vec![pick],
        };
        let mut parts = members.iter().map(|&m| PlacedPart::at_origin_of(&g.nodes[m]));
        let mut asm = Assembly::new(parts.next().expect("non-empty"), derive_seed(seed, &["x", &g.shape_id]));
        asm.parts.extend(parts);
        out.push(BenchmarkQuery {
            shape_id: g.shape_id.clone(),
            category: g.category.clone(),
            kind,
            x: asm.cloud(n_points)?,
            members,
            held_out: (kind == QueryKind::AllExceptOne).then(|| g.nodes[pick].clone()),
            styles: g.style_labels.clone(),
        });
    }
    Ok(out)
}

/// What a backend is allowed to see of a query.
#[derive(Debug, Clone, Copy)]
pub struct QueryView<'a> {
    pub x: &'a PointCloud,
    /// Parts of this shape must not be returned.
    pub exclude_shape: &'a str,
    /// Stable per-query identifier, for backends that need randomness.
    pub query_id: u64,
}

/// A retrieval method under test. Returns pool positions, best first.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn retrieve(&self, query: QueryView, pool: &EmbeddingIndex, k: usize) -> Result<Vec<usize>, RetrievalError>;
}

/// Ranks the pool by the density of the predicted mixture.
pub struct LearnedBackend<'a> {
    pub g: &'a RetrievalNet,
}

impl Backend for LearnedBackend<'_> {
    fn name(&self) -> &str {
        "ours"
    }

    fn retrieve(&self, q: QueryView, pool: &EmbeddingIndex, k: usize) -> Result<Vec<usize>, RetrievalError> {
        let mix = self.g.predict(q.x)?;
        let mut rng = rng_for(q.query_id, &["unused"]);
        let ranked = rank_candidates(
            &mix,
            pool,
            &SuggestConfig::max(k),
            |i| pool.entry(i).component.shape_id != q.exclude_shape,
            &mut rng,
        )?;
        Ok(ranked.into_iter().map(|s| s.entry).collect())
    }
}

/// Uniform sampling without replacement.
pub struct RandomBackend {
    pub seed: u64,
}

impl Backend for RandomBackend {
    fn name(&self) -> &str {
        "random"
    }

    fn retrieve(&self, q: QueryView, pool: &EmbeddingIndex, k: usize) -> Result<Vec<usize>, RetrievalError> {
        let allowed: Vec<usize> = (0..pool.len())
            .filter(|&i| pool.entry(i).component.shape_id != q.exclude_shape)
            .collect();
        let mut rng = rng_for(self.seed, &["random", &q.query_id.to_string()]);
        let k = k.min(allowed.len());
        Ok(sample(&mut rng, allowed.len(), k)
            .into_iter()
            .map(|j| allowed[j])
            .collect())
    }
}

fn query_id(q: &BenchmarkQuery) -> u64 {
    derive_seed(0, &[&q.shape_id, &format!("{:?}", q.kind)])
}

/// Top-`k` results of `backend` for every query, in query order.
pub fn run_backend(
    backend: &dyn Backend,
    queries: &[BenchmarkQuery],
    pool: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<Vec<usize>>, RetrievalError> {
    queries
        .par_iter()
        .map(|q| {
            let view = QueryView {
                x: &q.x,
                exclude_shape: &q.shape_id,
                query_id: query_id(q),
            };
            backend.retrieve(view, pool, k)
        })
        .collect()
}

/// Mean of a per-category metric plus how many queries were skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub mean: BTreeMap<String, f64>,
    pub counted: BTreeMap<String, usize>,
    pub skipped: BTreeMap<String, usize>,
}

impl CategoryScores {
    fn from_values(values: Vec<(String, Option<f64>)>) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut s = Self::default();
        for (cat, v) in values {
            match v {
                Some(v) => {
                    let e = sums.entry(cat).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
                None => *s.skipped.entry(cat).or_default() += 1,
            }
        }
        for (cat, (sum, n)) in sums {
            s.mean.insert(cat.clone(), sum / n as f64);
            s.counted.insert(cat, n);
        }
        s
    }

    /// Unweighted mean over categories.
    pub fn overall(&self) -> Option<f64> {
        if self.mean.is_empty() {
            return None;
        }
        Some(self.mean.values().sum::<f64>() / self.mean.len() as f64)
    }
}

/// Functional AP@k: a result is relevant when its part label equals the
/// held-out part's label.
pub fn functional_map(queries: &[BenchmarkQuery], results: &[Vec<usize>], pool: &EmbeddingIndex) -> CategoryScores {
    let values = queries
        .iter()
        .zip(results)
        .map(|(q, r)| {
            let v = q.label().map(|label| {
                let hits: Vec<bool> = r
                    .iter()
                    .map(|&i| {
                        let c = &pool.entry(i).component;
                        c.label_agreement >= LABEL_AGREEMENT && c.part_label.as_deref() == Some(label)
                    })
                    .collect();
                average_precision(&hits)
            });
            (q.category.clone(), v)
        })
        .collect();
    CategoryScores::from_values(values)
}

/// Mean over queries of the mean Hausdorff distance of the results to the
/// held-out part.
pub fn geometric_hausdorff(
    queries: &[BenchmarkQuery],
    results: &[Vec<usize>],
    pool: &EmbeddingIndex,
) -> CategoryScores {
    let values = queries
        .par_iter()
        .zip(results)
        .map(|(q, r)| {
            let v = q.held_out.as_ref().filter(|_| !r.is_empty()).map(|held| {
                r.iter()
                    .map(|&i| symmetric_hausdorff(&pool.entry(i).component.cloud_centered, &held.cloud_centered))
                    .sum::<f64>()
                    / r.len() as f64
            });
            (q.category.clone(), v)
        })
        .collect();
    CategoryScores::from_values(values)
}

/// Style AP@k: a result is relevant when its source shape's subclass set
/// overlaps the query shape's.
pub fn style_map(
    queries: &[BenchmarkQuery],
    results: &[Vec<usize>],
    pool: &EmbeddingIndex,
    styles: &BTreeMap<String, BTreeSet<String>>,
) -> CategoryScores {
    let values = queries
        .iter()
        .zip(results)
        .map(|(q, r)| {
            let v = q.styles.as_ref().map(|qs| {
                let hits: Vec<bool> = r
                    .iter()
                    .map(|&i| {
                        styles
                            .get(&pool.entry(i).component.shape_id)
                            .is_some_and(|s| styles_overlap(s, qs))
                    })
                    .collect();
                average_precision(&hits)
            });
            (q.category.clone(), v)
        })
        .collect();
    CategoryScores::from_values(values)
}

/// An `(X, Y, centroid)` placement example.
#[derive(Debug, Clone)]
pub struct PlacementPair {
    pub category: String,
    pub x: PointCloud,
    pub y: PointCloud,
    pub target: Point3,
}

/// `per_shape` placement examples from each trainable graph, drawn exactly
/// like training triplets.
pub fn placement_pairs(
    graphs: &[&ContactGraph],
    n_points: usize,
    per_shape: usize,
    seed: u64,
) -> Result<Vec<PlacementPair>, RetrievalError> {
    let (ok, _) = trainable(graphs.iter().copied());
    let sampler = TripletSampler::new(ok, n_points);
    let mut out = Vec::new();
    for round in 0..per_shape {
        for gi in 0..sampler.graphs().len() {
            let t = epoch_triplet(&sampler, seed, round, gi)?;
            out.push(PlacementPair {
                category: sampler.graphs()[gi].category.clone(),
                x: t.x,
                y: t.y,
                target: t.y_target_centroid,
            });
        }
    }
    Ok(out)
}

/// Mean Euclidean error of any predictor over the pairs, per category.
pub fn placement_error_with(
    pairs: &[PlacementPair],
    predict: impl Fn(&PlacementPair) -> Result<Point3, RetrievalError> + Sync,
) -> Result<CategoryScores, RetrievalError> {
    let values: Result<Vec<_>, RetrievalError> = pairs
        .par_iter()
        .map(|p| Ok((p.category.clone(), Some(placement_error(predict(p)?, p.target)))))
        .collect();
    Ok(CategoryScores::from_values(values?))
}

pub fn placement_mean_error(h: &PlacementNet, pairs: &[PlacementPair]) -> Result<CategoryScores, RetrievalError> {
    placement_error_with(pairs, |p| Ok(h.place(&p.x, &p.y)?))
}

/// Mean target of the pairs: the best constant predictor under squared loss.
pub fn mean_target(pairs: &[PlacementPair]) -> Point3 {
    let mut c = [0.0; 3];
    for p in pairs {
        for k in 0..3 {
            c[k] += p.target[k];
        }
    }
    c.map(|v| v / pairs.len().max(1) as f64)
}

/// A method's score next to the random baseline's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Compared {
    pub ours: CategoryScores,
    pub baseline: CategoryScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// How the numbers were computed.
    pub notes: Vec<String>,
    pub k: usize,
    pub functional: Option<Compared>,
    pub geometric: Option<Compared>,
    pub style_all_except_one: Option<Compared>,
    pub style_single: Option<Compared>,
    /// Placement error on training pairs, test pairs, and of the constant
    /// predictor at the mean training target on test pairs.
    pub placement_train: Option<CategoryScores>,
    pub placement_test: Option<CategoryScores>,
    pub placement_baseline_test: Option<CategoryScores>,
}

impl MetricReport {
    pub fn notes_default(k: usize) -> Vec<String> {
        vec![
            format!("AP@{k}: mean precision at the ranks of relevant results, 0 without hits"),
            format!("geometric: symmetric Hausdorff between centered clouds, unit-radius frame, mean over top {k}"),
            "pool: every component of the category except those of the query shape".into(),
            format!("labels with area agreement below {LABEL_AGREEMENT} are ignored"),
            "baseline: uniform sampling without replacement; placement baseline: mean training target".into(),
        ]
    }

    /// Plain-text tables, one row per category plus the mean.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut table = |title: &str, c: &Compared, higher_better: bool| {
            let _ = writeln!(
                out,
                "{title} ({})",
                if higher_better {
                    "higher is better"
                } else {
                    "lower is better"
                }
            );
            let _ = writeln!(out, "  {:<12} {:>8} {:>8}", "category", "random", "ours");
            for (cat, v) in &c.ours.mean {
                let b = c.baseline.mean.get(cat).copied().unwrap_or(f64::NAN);
                let _ = writeln!(out, "  {cat:<12} {b:>8.3} {v:>8.3}");
            }
            let _ = writeln!(
                out,
                "  {:<12} {:>8.3} {:>8.3}\n",
                "mean",
                c.baseline.overall().unwrap_or(f64::NAN),
                c.ours.overall().unwrap_or(f64::NAN)
            );
        };
        if let Some(c) = &self.functional {
            table(&format!("functional mAP@{}", self.k), c, true);
        }
        if let Some(c) = &self.geometric {
            table(&format!("top-{} Hausdorff", self.k), c, false);
        }
        if let Some(c) = &self.style_all_except_one {
            table(&format!("style mAP@{}, all except one", self.k), c, true);
        }
        if let Some(c) = &self.style_single {
            table(&format!("style mAP@{}, single part", self.k), c, true);
        }
        if let (Some(tr), Some(te)) = (&self.placement_train, &self.placement_test) {
            let _ = writeln!(out, "placement error (lower is better)");
            let _ = writeln!(out, "  {:<12} {:>8} {:>8} {:>8}", "category", "train", "test", "const");
            for (cat, v) in &te.mean {
                let t = tr.mean.get(cat).copied().unwrap_or(f64::NAN);
                let b = self
                    .placement_baseline_test
                    .as_ref()
                    .and_then(|b| b.mean.get(cat).copied())
                    .unwrap_or(f64::NAN);
                let _ = writeln!(out, "  {cat:<12} {t:>8.3} {v:>8.3} {b:>8.3}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Functional,
    Geometric,
    Style,
    Placement,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Functional, Metric::Geometric, Metric::Style, Metric::Placement];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    /// Placement examples drawn per shape.
    pub placement_pairs_per_shape: usize,
    pub metrics: BTreeSet<Metric>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            placement_pairs_per_shape: 4,
            metrics: Metric::ALL.into_iter().collect(),
        }
    }
}

/// One embedding index per category over every component of that category.
pub fn category_pools(
    f: &crate::nn::EmbeddingNet,
    graphs: &[&ContactGraph],
) -> Result<BTreeMap<String, EmbeddingIndex>, RetrievalError> {
    let cats: BTreeSet<&str> = graphs.iter().map(|g| g.category.as_str()).collect();
    cats.into_iter()
        .map(|c| {
            Ok((
                c.to_string(),
                EmbeddingIndex::build(f, graphs.iter().copied(), |g| g.category == c)?,
            ))
        })
        .collect()
}

fn compare(
    queries: &[BenchmarkQuery],
    pools: &BTreeMap<String, EmbeddingIndex>,
    ours: &dyn Backend,
    baseline: &dyn Backend,
    k: usize,
    score: impl Fn(&[BenchmarkQuery], &[Vec<usize>], &EmbeddingIndex) -> CategoryScores,
) -> Result<Compared, RetrievalError> {
    let mut out = Compared::default();
    for (cat, pool) in pools {
        let qs: Vec<BenchmarkQuery> = queries.iter().filter(|q| &q.category == cat).cloned().collect();
        if qs.is_empty() {
            continue;
        }
        for (backend, slot) in [(ours, &mut out.ours), (baseline, &mut out.baseline)] {
            let results = run_backend(backend, &qs, pool, k)?;
            let s = score(&qs, &results, pool);
            slot.mean.extend(s.mean);
            slot.counted.extend(s.counted);
            slot.skipped.extend(s.skipped);
        }
    }
    Ok(out)
}

/// Runs the selected benchmarks: retrieval queries come from `test`, pools
/// from `train` and `test` together, placement baselines from `train`.
pub fn evaluate(
    models: &crate::retrieval::Models,
    train: &[&ContactGraph],
    test: &[&ContactGraph],
    cfg: &EvalConfig,
) -> Result<MetricReport, RetrievalError> {
    let n = models.n_points();
    let mut report = MetricReport {
        notes: MetricReport::notes_default(cfg.k),
        k: cfg.k,
        ..MetricReport::default()
    };
    let all: Vec<&ContactGraph> = train.iter().chain(test).copied().collect();
    let wants = |m| cfg.metrics.contains(&m);
    let ours = LearnedBackend { g: &models.g };
    let random = RandomBackend {
        seed: derive_seed(cfg.seed, &["baseline"]),
    };
    if wants(Metric::Functional) || wants(Metric::Geometric) || wants(Metric::Style) {
        let pools = category_pools(&models.f, &all)?;
        let queries = build_queries(test, QueryKind::AllExceptOne, n, cfg.seed)?;
        if wants(Metric::Functional) {
            report.functional = Some(compare(&queries, &pools, &ours, &random, cfg.k, functional_map)?);
        }
        if wants(Metric::Geometric) {
            report.geometric = Some(compare(&queries, &pools, &ours, &random, cfg.k, geometric_hausdorff)?);
        }
        if wants(Metric::Style) {
            let styles: BTreeMap<String, BTreeSet<String>> = all
                .iter()
                .filter_map(|g| Some((g.shape_id.clone(), g.style_labels.clone()?)))
                .collect();
            let by_style = |q: &[BenchmarkQuery], r: &[Vec<usize>], p: &EmbeddingIndex| style_map(q, r, p, &styles);
            report.style_all_except_one = Some(compare(&queries, &pools, &ours, &random, cfg.k, by_style)?);
            let singles = build_queries(test, QueryKind::Single, n, cfg.seed)?;
            report.style_single = Some(compare(&singles, &pools, &ours, &random, cfg.k, by_style)?);
        }
    }
    if wants(Metric::Placement) {
        let per = cfg.placement_pairs_per_shape;
        let train_pairs = placement_pairs(train, n, per, derive_seed(cfg.seed, &["placement", "train"]))?;
        let test_pairs = placement_pairs(test, n, per, derive_seed(cfg.seed, &["placement", "test"]))?;
        report.placement_train = Some(placement_mean_error(&models.h, &train_pairs)?);
        report.placement_test = Some(placement_mean_error(&models.h, &test_pairs)?);
        let c = mean_target(&train_pairs);
        report.placement_baseline_test = Some(placement_error_with(&test_pairs, |_| Ok(c))?);
    }
    Ok(report)
}
