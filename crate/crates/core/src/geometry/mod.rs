//! Triangle meshes, bounding volume hierarchies and the point queries behind
//! the penetration penalty.

mod bvh;
mod obj;
mod query;
pub mod shapes;

use std::collections::HashMap;

use thiserror::Error;

pub use bvh::{Aabb, Bvh, BvhNode};
pub use obj::{load_obj, parse_obj, write_obj, write_obj_string};
pub use query::{
    closest_point_on_triangle, detect_penetrations, nearest_surface_point, point_inside,
    ray_triangle_hits, winding_number, Penetration, INSIDE_RAY_DIRECTION,
};

use crate::math::Vec3;
use crate::scalar::Real;

/// Triangles with less area than this (square meters) are degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, count: usize },
    #[error("triangle {triangle} is degenerate (area {area:e} m^2)")]
    Degenerate { triangle: usize, area: f64 },
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Indexed triangle mesh; coordinates in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[u32; 3]>,
}

impl<T: Real> TriMesh<T> {
    /// Builds a mesh after validating indices and rejecting degenerate triangles.
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh without validation (posed meshes produced by skinning).
    pub fn from_parts(vertices: Vec<Vec3<T>>, triangles: Vec<[u32; 3]>) -> Self {
        Self { vertices, triangles }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let count = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= count {
                    return Err(GeometryError::IndexOutOfRange { triangle: t, index: i as usize, count });
                }
            }
            let area = self.triangle_area(t).as_f64();
            if !(area > DEGENERATE_AREA) {
                return Err(GeometryError::Degenerate { triangle: t, area });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> T {
        let [a, b, c] = self.corners(t);
        (b - a).cross(c - a).norm() * T::lit(0.5)
    }

    pub fn bounds(&self) -> Aabb<T> {
        Aabb::from_points(self.vertices.iter().copied())
    }

    /// Checks that every edge is shared by exactly two triangles with opposite orientation.
    pub fn check_watertight(&self) -> Result<(), GeometryError> {
        if self.triangles.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.triangles.len() * 3);
        for tri in &self.triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut keys: Vec<_> = directed.iter().map(|(&k, &n)| (k, n)).collect();
        keys.sort_unstable();
        for ((a, b), n) in keys {
            if n != 1 {
                return Err(GeometryError::NotWatertight(format!(
                    "directed edge {a}->{b} used {n} times"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(GeometryError::NotWatertight(format!("edge {a}-{b} has no opposite twin")));
            }
        }
        Ok(())
    }

    pub fn is_watertight(&self) -> bool {
        self.check_watertight().is_ok()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh<T>) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    pub fn translated(&self, d: Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + d).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Subset of triangles, reindexed. Returns the mesh and the original vertex index of each new vertex.
    pub fn submesh(&self, triangle_ids: &[usize]) -> (Self, Vec<u32>) {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut original = Vec::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(triangle_ids.len());
        for &t in triangle_ids {
            let mut out = [0u32; 3];
            for (k, &v) in self.triangles[t].iter().enumerate() {
                out[k] = *remap.entry(v).or_insert_with(|| {
                    original.push(v);
                    vertices.push(self.vertices[v as usize]);
                    (vertices.len() - 1) as u32
                });
            }
            triangles.push(out);
        }
        (Self { vertices, triangles }, original)
    }

    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        TriMesh { vertices: self.vertices.iter().map(|v| v.cast()).collect(), triangles: self.triangles.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices_and_degenerates() {
        let v = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]]).is_ok());
        assert!(matches!(
            TriMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(GeometryError::IndexOutOfRange { index: 3, .. })
        ));
        let line = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        assert!(matches!(TriMesh::new(line, vec![[0, 1, 2]]), Err(GeometryError::Degenerate { .. })));
    }

    #[test]
    fn watertightness() {
        let cube = shapes::unit_cube::<f64>();
        assert!(cube.is_watertight());
        let mut open = cube.clone();
        open.triangles.pop();
        assert!(!open.is_watertight());
        let mut flipped = cube;
        flipped.triangles[0].swap(1, 2);
        assert!(!flipped.is_watertight());
    }
}
