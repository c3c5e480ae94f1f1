use partforge::geometry::{
    directional_hausdorff, min_distance, normalize_shape, pca_obb, recenter, sample_surface, Frame, Point3, PointCloud,
    PointGrid,
};
use partforge::mesh::TriangleMesh;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_nearest(q: Point3, b: &[Point3]) -> f64 {
    b.iter()
        .map(|p| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn brute_hausdorff(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter().map(|&q| brute_nearest(q, b)).fold(0.0, f64::max)
}

fn brute_min(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter().map(|&q| brute_nearest(q, b)).fold(f64::INFINITY, f64::min)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> PointCloud {
    let offset: Point3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
    let pts = (0..n)
        .map(|_| {
            [
                offset[0] + rng.random_range(-spread..spread),
                offset[1] + rng.random_range(-spread..spread),
                rng.random_range(-spread..spread) * 0.2,
            ]
        })
        .collect();
    PointCloud::object(pts).unwrap()
}

#[test]
fn distances_equal_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let na = rng.random_range(1..200);
        let nb = rng.random_range(1..200);
        let a = random_cloud(&mut rng, na, 0.5);
        let b = random_cloud(&mut rng, nb, 0.5);
        assert_eq!(directional_hausdorff(&a, &b), brute_hausdorff(a.points(), b.points()));
        assert_eq!(directional_hausdorff(&b, &a), brute_hausdorff(b.points(), a.points()));
        assert_eq!(min_distance(&a, &b), brute_min(a.points(), b.points()));
    }
}

#[test]
fn grid_handles_queries_far_outside() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_cloud(&mut rng, 300, 0.3);
    let grid = PointGrid::new(b.points());
    for _ in 0..200 {
        let q = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ];
        assert_eq!(grid.nearest(q).1, brute_nearest(q, b.points()));
    }
}

#[test]
fn two_hundred_point_clouds_hausdorff_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = random_cloud(&mut rng, 200, 1.0);
    let b = random_cloud(&mut rng, 200, 1.0);
    assert_eq!(directional_hausdorff(&a, &b), brute_hausdorff(a.points(), b.points()));
}

fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Random unit quaternion.
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn apply(r: &[[f64; 3]; 3], p: Point3) -> Point3 {
    [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

#[test]
fn pca_diagonal_invariant_to_rotation_and_linear_in_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Box corners with distinct extents so the principal axes are unique.
    let mut pts = Vec::new();
    for i in 0..8 {
        pts.push([
            if i & 1 == 0 { 0.0 } else { 3.0 },
            if i & 2 == 0 { 0.0 } else { 1.5 },
            if i & 4 == 0 { 0.0 } else { 0.5 },
        ]);
    }
    let base = pca_obb(&PointCloud::object(pts.clone()).unwrap()).diagonal;
    let expected = (9.0f64 + 2.25 + 0.25).sqrt();
    assert!((base - expected).abs() < 1e-9);
    for _ in 0..20 {
        let r = rotation(&mut rng);
        let rotated: Vec<_> = pts.iter().map(|&p| apply(&r, p)).collect();
        let d = pca_obb(&PointCloud::object(rotated).unwrap()).diagonal;
        assert!((d - base).abs() < 1e-6, "{d} vs {base}");
    }
    let scaled: Vec<_> = pts.iter().map(|p| p.map(|x| 2.5 * x)).collect();
    let d = pca_obb(&PointCloud::object(scaled).unwrap()).diagonal;
    assert!((d - 2.5 * base).abs() < 1e-9);
}

#[test]
fn normalized_multi_cloud_has_unit_max_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let clouds: Vec<_> = (0..4).map(|_| random_cloud(&mut rng, 50, 2.0)).collect();
        let norm = normalize_shape(&clouds).unwrap();
        let max = clouds
            .iter()
            .flat_map(|c| c.points().iter())
            .map(|&p| {
                let q = norm.apply(p);
                (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
            })
            .fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-6);
    }
}

#[test]
fn area_ratio_three_to_one() {
    // Triangle A has area 1.5, triangle B 0.5; they are disjoint in x.
    let mesh = TriangleMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [10.0, 0.0, 0.0],
            [11.0, 0.0, 0.0],
            [10.0, 1.0, 0.0],
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let n = 40_000;
    let pc = sample_surface(&mesh, n, 3).unwrap();
    let in_a = pc.points().iter().filter(|p| p[0] < 5.0).count() as f64;
    // Binomial(n, 3/4): expected 30000, std ≈ 86.6; 2% tolerance on the ratio.
    let ratio = in_a / (n as f64 - in_a);
    assert!((ratio - 3.0).abs() / 3.0 < 0.02, "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_properties(seed in any::<u64>(), na in 1usize..40, nb in 1usize..40, extra in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, na, 0.7);
        let b = random_cloud(&mut rng, nb, 0.7);
        prop_assert_eq!(directional_hausdorff(&a, &a), 0.0);
        prop_assert_eq!(min_distance(&a, &b), min_distance(&b, &a));
        let m = min_distance(&a, &b);
        prop_assert!(m <= directional_hausdorff(&a, &b));
        prop_assert!(m <= directional_hausdorff(&b, &a));
        // Adding points to the target never increases the directional distance.
        let mut bigger = b.points().to_vec();
        bigger.extend(random_cloud(&mut rng, extra, 1.0).points());
        let bigger = PointCloud::object(bigger).unwrap();
        prop_assert!(directional_hausdorff(&a, &bigger) <= directional_hausdorff(&a, &b));
    }

    #[test]
    fn recenter_is_idempotent(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pc = random_cloud(&mut rng, n, 3.0);
        let (once, c) = recenter(&pc);
        let (twice, c2) = recenter(&once);
        prop_assert_eq!(once.frame(), Frame::Centered);
        for (p, q) in once.points().iter().zip(twice.points()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
        prop_assert!(c2.iter().all(|x| x.abs() < 1e-12));
        let restored = once.translated(c);
        for (p, q) in restored.points().iter().zip(pc.points()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
    }
}
