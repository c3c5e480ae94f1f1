use super::{centroid, dot, sub, Point3, PointCloud};

/// PCA-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    /// Principal axes, by descending variance.
    pub axes: [Point3; 3],
    pub extents: Point3,
    pub diagonal: f64,
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with unit eigenvectors whose
/// largest-magnitude entry is positive.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [Point3; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut pairs: Vec<(f64, Point3)> = (0..3)
        .map(|i| {
            let mut e = [v[0][i], v[1][i], v[2][i]];
            let big = (0..3)
                .max_by(|&x, &y| e[x].abs().total_cmp(&e[y].abs()).then(y.cmp(&x)))
                .expect("3 entries");
            if e[big] < 0.0 {
                e = [-e[0], -e[1], -e[2]];
            }
            (a[i][i], e)
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    (
        [pairs[0].0, pairs[1].0, pairs[2].0],
        [pairs[0].1, pairs[1].1, pairs[2].1],
    )
}

fn covariance(points: &[Point3]) -> [[f64; 3]; 3] {
    let c = centroid(points);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = sub(*p, c);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let n = points.len() as f64;
    cov.map(|row| row.map(|x| x / n))
}

/// PCA-aligned box of a cloud. Rank-deficient clouds yield zero extents.
pub fn pca_obb(pc: &PointCloud) -> OrientedBox {
    let (_, axes) = symmetric_eigen3(covariance(pc.points()));
    let mut extents = [0.0; 3];
    for (k, axis) in axes.iter().enumerate() {
        let (lo, hi) = pc
            .points()
            .iter()
            .map(|&p| dot(p, *axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        extents[k] = (hi - lo).max(0.0);
    }
    let diagonal = (extents[0] * extents[0] + extents[1] * extents[1] + extents[2] * extents[2]).sqrt();
    OrientedBox {
        axes,
        extents,
        diagonal,
    }
}
