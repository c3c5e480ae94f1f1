use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, GeometryError, Point3, PointCloud};
use crate::mesh::TriangleMesh;

/// Area-weighted triangle picker for repeated sampling from one mesh.
#[derive(Debug, Clone)]
pub struct SurfaceSampler<'a> {
    mesh: &'a TriangleMesh,
    cumulative: Vec<f64>,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Result<Self, GeometryError> {
        let mut cumulative = Vec::with_capacity(mesh.triangles.len());
        let mut total = 0.0;
        for a in mesh.triangle_areas() {
            total += a;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(GeometryError::DegenerateMesh);
        }
        Ok(Self { mesh, cumulative })
    }

    pub fn total_area(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    /// Index of the triangle each area-uniform draw falls in, plus the point.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Point3) {
        let u = rng.random::<f64>() * self.total_area();
        let t = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        let [a, b, c] = self.mesh.corners(t);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let p = [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]);
        (t, p)
    }
}

/// `n` area-uniform surface samples, deterministic for a given seed.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng_seed: u64) -> Result<PointCloud, GeometryError> {
    sample_surface_with(mesh, n, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

pub fn sample_surface_with<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud, GeometryError> {
    if n == 0 {
        return Err(GeometryError::ZeroSamples);
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let points = (0..n).map(|_| sampler.sample_one(rng).1).collect();
    PointCloud::new(points, Frame::Object)
}

/// A placed part for [`resample_union`].
#[derive(Debug, Clone, Copy)]
pub struct WeightedPart<'a> {
    /// Surface samples with zero centroid.
    pub cloud: &'a PointCloud,
    pub position: Point3,
    /// Sampling weight, normally the part's surface area.
    pub weight: f64,
}

/// Resamples `n` points from the union of placed parts. Each point picks a
/// part with probability proportional to its weight; points of one part are
/// drawn without replacement while its cloud lasts.
pub fn resample_union<R: Rng + ?Sized>(
    parts: &[WeightedPart],
    n: usize,
    rng: &mut R,
) -> Result<PointCloud, GeometryError> {
    if n == 0 {
        return Err(GeometryError::ZeroSamples);
    }
    if parts.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let total: f64 = parts.iter().map(|p| p.weight).sum();
    if !(total > 0.0) || parts.iter().any(|p| !(p.weight >= 0.0)) {
        return Err(GeometryError::DegenerateMesh);
    }
    let mut counts = vec![0usize; parts.len()];
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = parts.len() - 1;
        for (i, p) in parts.iter().enumerate() {
            acc += p.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        counts[pick] += 1;
    }
    let mut points = Vec::with_capacity(n);
    for (part, &count) in parts.iter().zip(&counts) {
        let src = part.cloud.points();
        let mut order: Vec<usize> = (0..src.len()).collect();
        for k in 0..count {
            // Partial Fisher-Yates; restart the permutation once exhausted.
            let j = k % src.len();
            if j == 0 && k > 0 {
                order = (0..src.len()).collect();
            }
            let r = rng.random_range(j..src.len());
            order.swap(j, r);
            points.push(super::add(src[order[j]], part.position));
        }
    }
    PointCloud::new(points, Frame::Object)
}
