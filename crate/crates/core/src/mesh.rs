//! Triangle soups and their ASCII file format.
//!
//! ```text
//! trisoup 1
//! # comments and blank lines are ignored
//! v <x> <y> <z>        one line per position
//! t <a> <b> <c>        one line per triangle, 0-based position indices
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Aabb, Point3};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {tri} references vertex {index} but only {count} exist")]
    BadIndex { tri: usize, index: u32, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub positions: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

pub(crate) fn tri_area(a: Point3, b: Point3, c: Point3) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = u[1] * v[2] - u[2] * v[1];
    let y = u[2] * v[0] - u[0] * v[2];
    let z = u[0] * v[1] - u[1] * v[0];
    0.5 * (x * x + y * y + z * z).sqrt()
}

impl TriangleMesh {
    pub fn new(positions: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = Self { positions, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<(), MeshError> {
        for (tri, t) in self.triangles.iter().enumerate() {
            for &index in t {
                if index as usize >= self.positions.len() {
                    return Err(MeshError::BadIndex {
                        tri,
                        index,
                        count: self.positions.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                tri_area(a, b, c)
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.positions)
    }

    /// Disjoint union; indices of `other` are shifted.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.positions.len() as u32;
        self.positions.extend_from_slice(&other.positions);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
    }

    pub fn transformed(&self, f: impl Fn(Point3) -> Point3) -> TriangleMesh {
        TriangleMesh {
            positions: self.positions.iter().map(|&p| f(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        });
        match lines.next() {
            Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == ["trisoup", "1"] => {}
            Some((i, _)) => {
                return Err(MeshError::Parse {
                    line: i + 1,
                    msg: "expected header `trisoup 1`".into(),
                })
            }
            None => {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: "empty file".into(),
                })
            }
        }
        let mut mesh = TriangleMesh::default();
        for (i, line) in lines {
            let err = |msg: String| MeshError::Parse { line: i + 1, msg };
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            if rest.len() != 3 {
                return Err(err(format!("`{tag}` record needs 3 fields, got {}", rest.len())));
            }
            match tag {
                "v" => {
                    let mut p = [0.0f64; 3];
                    for (k, f) in rest.iter().enumerate() {
                        p[k] = f.parse().map_err(|e| err(format!("bad coordinate `{f}`: {e}")))?;
                        if !p[k].is_finite() {
                            return Err(err(format!("non-finite coordinate `{f}`")));
                        }
                    }
                    mesh.positions.push(p);
                }
                "t" => {
                    let mut t = [0u32; 3];
                    for (k, f) in rest.iter().enumerate() {
                        t[k] = f.parse().map_err(|e| err(format!("bad index `{f}`: {e}")))?;
                    }
                    mesh.triangles.push(t);
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("trisoup 1\n");
        for p in &self.positions {
            let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Axis-aligned box with corners `min` and `max`, 12 triangles.
    pub fn cuboid(min: Point3, max: Point3) -> Self {
        let mut positions = Vec::with_capacity(8);
        for i in 0..8 {
            positions.push([
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]);
        }
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        Self { positions, triangles }
    }

    /// Closed cylinder along `axis` (0, 1 or 2) from `base` with the given
    /// length, radius and number of facets.
    pub fn cylinder(base: Point3, axis: usize, length: f64, radius: f64, facets: usize) -> Self {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut positions = Vec::with_capacity(2 * facets + 2);
        for end in 0..2 {
            for k in 0..facets {
                let a = std::f64::consts::TAU * k as f64 / facets as f64;
                let mut p = base;
                p[axis] += end as f64 * length;
                p[u] += radius * a.cos();
                p[v] += radius * a.sin();
                positions.push(p);
            }
        }
        let mut top = base;
        top[axis] += length;
        positions.push(base);
        positions.push(top);
        let (cb, ct) = (2 * facets as u32, 2 * facets as u32 + 1);
        let f = facets as u32;
        let mut triangles = Vec::with_capacity(4 * facets);
        for k in 0..f {
            let k2 = (k + 1) % f;
            triangles.push([k, k2, f + k]);
            triangles.push([k2, f + k2, f + k]);
            triangles.push([cb, k2, k]);
            triangles.push([ct, f + k, f + k2]);
        }
        Self { positions, triangles }
    }
}
