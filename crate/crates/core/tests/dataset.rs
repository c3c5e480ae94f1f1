use std::collections::BTreeSet;

use partforge::dataset::corpus::{generate_corpus, generate_shape, CorpusConfig};
use partforge::dataset::{
    build_contact_graph, build_manifest, dataset_stats, export_dataset, load_raw_corpus, merge_components,
    prepare_shape, write_raw_shape, ContactGraph, Dataset, PrepConfig, RawComponent, RawShape, Split,
};
use partforge::geometry::Point3;
use partforge::mesh::TriangleMesh;
use proptest::prelude::*;

fn cfg(n_points: usize) -> PrepConfig {
    PrepConfig {
        n_points,
        ..PrepConfig::default()
    }
}

fn shape(id: &str, category: &str, parts: Vec<(&str, TriangleMesh)>) -> RawShape {
    RawShape {
        shape_id: id.into(),
        category: category.into(),
        components: parts
            .into_iter()
            .map(|(cid, mesh)| RawComponent {
                id: cid.into(),
                mesh,
                label: None,
            })
            .collect(),
        fine_grained_labels: None,
    }
}

fn brute_min(a: &[Point3], b: &[Point3]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

fn brute_directional(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter().map(|p| brute_min(&[*p], b)).fold(0.0, f64::max)
}

fn brute_edges(g: &ContactGraph, tau: f64) -> BTreeSet<(usize, usize)> {
    let clouds: Vec<_> = g.nodes.iter().map(|n| n.object_cloud()).collect();
    let mut out = BTreeSet::new();
    for i in 0..clouds.len() {
        for j in i + 1..clouds.len() {
            if brute_min(clouds[i].points(), clouds[j].points()) < tau {
                out.insert((i, j));
            }
        }
    }
    out
}

fn table_with_four_legs() -> RawShape {
    let mut parts = vec![("top", TriangleMesh::cuboid([0.0, 0.7, 0.0], [1.6, 0.78, 1.0]))];
    let legs = [(0.1, 0.1), (1.5, 0.1), (0.1, 0.9), (1.5, 0.9)];
    let names = ["leg_a", "leg_b", "leg_c", "leg_d"];
    for (name, (x, z)) in names.iter().zip(legs) {
        // Slightly different widths so the legs stay separate nodes.
        let w = 0.04 + 0.005 * parts.len() as f64;
        parts.push((name, TriangleMesh::cuboid([x - w, 0.0, z - w], [x + w, 0.7, z + w])));
    }
    shape("table", "table", parts)
}

#[test]
fn table_is_a_star_graph() {
    let g = build_contact_graph(&table_with_four_legs(), &cfg(300), 2).unwrap();
    let expected: BTreeSet<_> = (1..5).map(|i| (0, i)).collect();
    assert_eq!(g.edges, expected);
    assert_eq!(brute_edges(&g, 0.05), g.edges);
}

#[test]
fn offset_duplicate_legs_merge_by_overlap() {
    let leg = TriangleMesh::cuboid([0.0, 0.0, 0.0], [0.08, 1.0, 0.08]);
    let copy = leg.transformed(|p| [p[0] + 0.01, p[1], p[2]]);
    let seat = TriangleMesh::cuboid([0.0, 1.0, 0.0], [1.0, 1.1, 1.0]);
    let s = shape("dup", "chair", vec![("leg", leg), ("leg_copy", copy), ("seat", seat)]);
    let c = cfg(1000);
    let g = build_contact_graph(&s, &c, 4).unwrap();
    let (a, b) = (g.nodes[0].object_cloud(), g.nodes[1].object_cloud());
    let h = brute_directional(a.points(), b.points()).min(brute_directional(b.points(), a.points()));
    assert!(h < 0.05, "directional Hausdorff {h}");
    let merged = merge_components(g, &c, 4).unwrap();
    assert_eq!(merged.nodes.len(), 2);
    assert_eq!(merged.merge_stats.overlap_merges, 1);
    assert_eq!(merged.nodes[0].merged_from, vec!["leg", "leg_copy"]);
}

fn two_box_graph(id: &str, category: &str, n_points: usize) -> ContactGraph {
    let s = shape(
        id,
        category,
        vec![
            ("a", TriangleMesh::cuboid([0.0; 3], [1.0; 3])),
            ("b", TriangleMesh::cuboid([1.0, 0.0, 0.0], [2.0, 1.2, 1.0])),
        ],
    );
    prepare_shape(&s, &cfg(n_points), 0).unwrap()
}

fn one_box_graph(id: &str, category: &str, n_points: usize) -> ContactGraph {
    let s = shape(id, category, vec![("a", TriangleMesh::cuboid([0.0; 3], [1.0; 3]))]);
    prepare_shape(&s, &cfg(n_points), 0).unwrap()
}

#[test]
fn hundred_graphs_split_eighty_twenty() {
    let graphs: Vec<_> = (0..100)
        .map(|i| two_box_graph(&format!("c{i:03}"), "chair", 20))
        .collect();
    let (m, admitted) = build_manifest(graphs, &cfg(20), 0.8, 9);
    assert_eq!(admitted.len(), 100);
    assert_eq!(m.shapes.iter().filter(|s| s.split == Split::Train).count(), 80);
    assert_eq!(m.shapes.iter().filter(|s| s.split == Split::Test).count(), 20);
    assert!(m.warnings.is_empty());
}

#[test]
fn single_node_graph_is_discarded_and_counted() {
    let graphs = vec![
        two_box_graph("t0", "table", 20),
        one_box_graph("t1", "table", 20),
        two_box_graph("t2", "table", 20),
    ];
    let (m, admitted) = build_manifest(graphs, &cfg(20), 0.8, 1);
    assert_eq!(admitted.len(), 2);
    assert_eq!(m.stats.discarded["table"][&1], 1);
    assert_eq!(m.stats.total_discarded(), 1);
    // Fewer than five admitted shapes in the category.
    assert_eq!(m.warnings.len(), 1);
}

#[test]
fn histogram_examples() {
    let (empty, _) = build_manifest(Vec::new(), &cfg(20), 0.8, 1);
    let stats = dataset_stats(&empty);
    assert!(stats.admitted.is_empty() && stats.discarded.is_empty());

    let ids = ["p0", "p1", "p2", "p3", "p4"];
    let parts = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let x = k as f64;
            (*id, TriangleMesh::cuboid([x, 0.0, 0.0], [x + 1.0, 1.0 + 0.1 * x, 1.0]))
        })
        .collect();
    let five = shape("five", "chair", parts);
    let g5 = prepare_shape(&five, &cfg(30), 0).unwrap();
    assert_eq!(g5.nodes.len(), 5);
    let graphs = vec![two_box_graph("a", "chair", 20), two_box_graph("b", "chair", 20), g5];
    let (m, _) = build_manifest(graphs, &cfg(30), 0.8, 1);
    let h = &dataset_stats(&m).admitted["chair"];
    assert_eq!(h.len(), 2);
    assert_eq!((h[&2], h[&5]), (2, 1));
}

#[test]
fn corpus_histogram_sums_to_shape_count() {
    let corpus = generate_corpus(&CorpusConfig {
        shapes_per_category: 25,
        ..CorpusConfig::default()
    });
    let c = cfg(64);
    let graphs: Vec<_> = corpus.iter().map(|s| prepare_shape(s, &c, 3).unwrap()).collect();
    let scanned_admitted = graphs.iter().filter(|g| (2..=8).contains(&g.nodes.len())).count();
    let (m, _) = build_manifest(graphs, &c, 0.8, 3);
    let stats = dataset_stats(&m);
    assert_eq!(stats.total_admitted(), scanned_admitted);
    assert_eq!(stats.total_admitted() + stats.total_discarded(), 50);
    assert_eq!(stats, m.stats);
}

#[test]
fn export_is_deterministic_and_round_trips_bit_exact() {
    let corpus: Vec<_> = (0..6)
        .flat_map(|i| [generate_shape("chair", i, 5), generate_shape("table", i, 5)])
        .collect();
    let c = cfg(200);
    let graphs: Vec<_> = corpus.iter().map(|s| prepare_shape(s, &c, 8).unwrap()).collect();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    export_dataset(graphs.clone(), &c, 0.8, 8, d1.path()).unwrap();
    export_dataset(graphs.clone(), &c, 0.8, 8, d2.path()).unwrap();
    for f in ["manifest.json", "components.bin"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }

    let ds = Dataset::load(d1.path()).unwrap();
    assert_eq!(ds.graphs.len(), ds.manifest.shapes.len());
    for loaded in &ds.graphs {
        let original = graphs.iter().find(|g| g.shape_id == loaded.shape_id).unwrap();
        assert_eq!(loaded.nodes, original.nodes);
        assert_eq!(loaded.edges, original.edges);
        assert_eq!(loaded.style_labels, original.style_labels);
        // Stored edges agree with the geometry of the stored clouds.
        assert_eq!(brute_edges(loaded, c.tau_proximity), loaded.edges);
    }
    assert_eq!(ds.train().len() + ds.test().len(), ds.graphs.len());
}

#[test]
fn raw_shape_folders_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = [generate_shape("chair", 0, 1), generate_shape("table", 1, 1)];
    for s in &shapes {
        write_raw_shape(&dir.path().join(&s.shape_id), s).unwrap();
    }
    let back = load_raw_corpus(dir.path()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in shapes.iter().zip(&back) {
        assert_eq!(a.shape_id, b.shape_id);
        assert_eq!(a.fine_grained_labels, b.fine_grained_labels);
        let ids_a: Vec<_> = a.components.iter().map(|c| (&c.id, &c.label)).collect();
        let ids_b: Vec<_> = b.components.iter().map(|c| (&c.id, &c.label)).collect();
        assert_eq!(ids_a, ids_b);
        for (ca, cb) in a.components.iter().zip(&b.components) {
            assert_eq!(ca.mesh, cb.mesh);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Merging never adds nodes, keeps every raw component exactly once and
    /// leaves edges consistent with geometry.
    #[test]
    fn merging_is_a_contraction(seed in any::<u64>(), table in any::<bool>()) {
        let category = if table { "table" } else { "chair" };
        let raw = generate_shape(category, (seed % 1000) as usize, seed);
        let c = cfg(100);
        let g0 = build_contact_graph(&raw, &c, seed).unwrap();
        let g = merge_components(g0.clone(), &c, seed).unwrap();
        prop_assert!(g.nodes.len() <= g0.nodes.len());
        let mut ids: Vec<String> = g.nodes.iter().flat_map(|n| n.merged_from.iter().cloned()).collect();
        ids.sort();
        let mut raw_ids: Vec<String> = raw.components.iter().map(|c| c.id.clone()).collect();
        raw_ids.sort();
        prop_assert_eq!(ids, raw_ids);
        prop_assert_eq!(brute_edges(&g, c.tau_proximity), g.edges.clone());
        let area: f64 = g.nodes.iter().map(|n| n.surface_area).sum();
        let area0: f64 = g0.nodes.iter().map(|n| n.surface_area).sum();
        prop_assert!((area - area0).abs() < 1e-9 * area0);
    }
}
