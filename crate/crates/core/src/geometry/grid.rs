use super::{Aabb, Point3};

/// Uniform-grid nearest-neighbor index over a fixed point set.
///
/// Results are exact: a query returns the same minimum distance as a linear
/// scan over all points.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<Point3>,
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    // Counting-sort layout: indices of the points in cell `c` are
    // `order[start[c]..start[c + 1]]`.
    start: Vec<u32>,
    order: Vec<u32>,
}

fn sq_dist(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl PointGrid {
    /// Builds the index. Panics on an empty point set.
    pub fn new(points: &[Point3]) -> Self {
        let bbox = Aabb::from_points(points).expect("PointGrid needs at least one point");
        let ext = bbox.extents();
        let max_ext = ext[0].max(ext[1]).max(ext[2]);
        // Roughly two points per occupied cell for surface-like clouds.
        let per_axis = ((points.len() as f64 / 2.0).sqrt()).ceil().max(1.0);
        let mut cell = max_ext / per_axis;
        if cell <= 0.0 || !cell.is_finite() {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|k| ((ext[k] / cell).floor() as usize + 1).min(1024));
        let mut grid = PointGrid {
            points: points.to_vec(),
            origin: bbox.min,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let cells: Vec<usize> = points.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        let mut counts = vec![0u32; n_cells + 1];
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.start = counts;
        grid.order = order;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_of(&self, p: Point3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - self.origin[k]) / self.cell).floor();
            if c < 0.0 || c.is_nan() {
                0
            } else {
                (c as usize).min(self.dims[k] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_cell(&self, c: [usize; 3], q: Point3, best: &mut (usize, f64)) {
        let f = self.flat(c);
        for &i in &self.order[self.start[f] as usize..self.start[f + 1] as usize] {
            let d = sq_dist(q, self.points[i as usize]);
            if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                *best = (i as usize, d);
            }
        }
    }

    /// Index of the nearest point and its Euclidean distance. Ties go to the
    /// lowest index.
    pub fn nearest(&self, q: Point3) -> (usize, f64) {
        let center = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..=max_ring {
            self.scan_ring(center, r, q, &mut best);
            // Everything not yet scanned lies beyond one of the box faces
            // that are strictly inside the grid.
            let mut bound = f64::INFINITY;
            let mut covers_all = true;
            for k in 0..3 {
                if center[k] > r {
                    covers_all = false;
                    let face = self.origin[k] + (center[k] - r) as f64 * self.cell;
                    bound = bound.min((q[k] - face).max(0.0));
                }
                if center[k] + r + 1 < self.dims[k] {
                    covers_all = false;
                    let face = self.origin[k] + (center[k] + r + 1) as f64 * self.cell;
                    bound = bound.min((face - q[k]).max(0.0));
                }
            }
            if covers_all || best.1 < bound * bound * (1.0 - 1e-9) {
                break;
            }
        }
        (best.0, best.1.sqrt())
    }

    fn scan_ring(&self, c: [usize; 3], r: usize, q: Point3, best: &mut (usize, f64)) {
        let lo = |k: usize| c[k].saturating_sub(r);
        let hi = |k: usize| (c[k] + r).min(self.dims[k] - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let ring = (x.abs_diff(c[0])).max(y.abs_diff(c[1])).max(z.abs_diff(c[2]));
                    if ring == r {
                        self.scan_cell([x, y, z], q, best);
                    }
                }
            }
        }
    }
}
