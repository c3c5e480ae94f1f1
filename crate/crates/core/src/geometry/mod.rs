//! Point-cloud primitives: sampling, recentering, distances, boxes and
//! shape normalization. Everything here is a pure function.

mod grid;
mod pca;
mod sampling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::PointGrid;
pub use pca::{pca_obb, symmetric_eigen3, OrientedBox};
pub use sampling::{resample_union, sample_surface, sample_surface_with, SurfaceSampler, WeightedPart};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate mesh")]
    DegenerateMesh,
    #[error("zero-radius shape")]
    ZeroRadius,
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Object,
    Centered,
}

/// Non-empty list of finite points tagged with the frame they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points, frame })
    }

    pub fn object(points: Vec<Point3>) -> Result<Self, GeometryError> {
        Self::new(points, Frame::Object)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.points).expect("point clouds are non-empty")
    }

    /// Translates every point by `t`, keeping the frame tag.
    pub fn translated(&self, t: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| add(*p, t)).collect(),
            frame: self.frame,
        }
    }

    /// Places a centered cloud at `position`, producing an object-frame cloud.
    pub fn placed_at(&self, position: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| add(*p, position)).collect(),
            frame: Frame::Object,
        }
    }

    /// Flattened `x y z x y z ...` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Moves the cloud's centroid to the origin. Returns the centered cloud and
/// the centroid that translates it back.
pub fn recenter(pc: &PointCloud) -> (PointCloud, Point3) {
    let c = pc.centroid();
    let points = pc.points.iter().map(|p| sub(*p, c)).collect();
    (
        PointCloud {
            points,
            frame: Frame::Centered,
        },
        c,
    )
}

/// Largest distance from a point of `a` to its nearest point in `b`.
pub fn directional_hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
    let grid = PointGrid::new(b.points());
    a.points().iter().map(|&p| grid.nearest(p).1).fold(0.0, f64::max)
}

/// `max(h(a→b), h(b→a))`.
pub fn symmetric_hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
    directional_hausdorff(a, b).max(directional_hausdorff(b, a))
}

/// Smallest point-to-point distance between the two clouds.
pub fn min_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    // Index the larger cloud, query with the smaller.
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let grid = PointGrid::new(large.points());
    let mut best = f64::INFINITY;
    for &p in small.points() {
        best = best.min(grid.nearest(p).1);
        if best == 0.0 {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points(points: &[Point3]) -> Option<Self> {
        let first = *points.first()?;
        let mut b = Aabb { min: first, max: first };
        for p in &points[1..] {
            b.extend(*p);
        }
        Some(b)
    }

    pub fn extend(&mut self, p: Point3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut b = *self;
        b.extend(other.min);
        b.extend(other.max);
        b
    }

    pub fn center(&self) -> Point3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extents(&self) -> Point3 {
        sub(self.max, self.min)
    }

    pub fn diagonal(&self) -> f64 {
        norm(self.extents())
    }
}

/// Translation and uniform scale that map a shape into the unit ball around
/// its bounding-box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeNormalization {
    pub center: Point3,
    pub radius: f64,
}

impl ShapeNormalization {
    pub fn apply(&self, p: Point3) -> Point3 {
        let d = sub(p, self.center);
        [d[0] / self.radius, d[1] / self.radius, d[2] / self.radius]
    }

    pub fn apply_cloud(&self, pc: &PointCloud) -> PointCloud {
        PointCloud {
            points: pc.points.iter().map(|&p| self.apply(p)).collect(),
            frame: pc.frame,
        }
    }
}

/// Center = bounding-box center of the union, radius = farthest point from it.
pub fn normalize_shape(clouds: &[PointCloud]) -> Result<ShapeNormalization, GeometryError> {
    normalize_points(clouds.iter().flat_map(|c| c.points().iter().copied()))
}

pub fn normalize_points(points: impl Iterator<Item = Point3> + Clone) -> Result<ShapeNormalization, GeometryError> {
    let mut bbox: Option<Aabb> = None;
    for p in points.clone() {
        match &mut bbox {
            Some(b) => b.extend(p),
            None => bbox = Some(Aabb { min: p, max: p }),
        }
    }
    let center = bbox.ok_or(GeometryError::EmptyCloud)?.center();
    let radius = points.map(|p| distance(p, center)).fold(0.0, f64::max);
    if radius <= 0.0 || !radius.is_finite() {
        return Err(GeometryError::ZeroRadius);
    }
    Ok(ShapeNormalization { center, radius })
}
