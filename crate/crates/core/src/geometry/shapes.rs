//! Closed primitive meshes: boxes, spheres and capsules.

use std::collections::HashMap;

use crate::math::Vec3;
use crate::scalar::Real;

use super::TriMesh;

/// Axis-aligned cube of side 1 centered at the origin (12 triangles).
pub fn unit_cube<T: Real>() -> TriMesh<T> {
    let h = T::lit(0.5);
    box_grid(Vec3::new(-h, -h, -h), Vec3::new(h, h, h), [1, 1, 1])
}

/// Closed axis-aligned box with each face subdivided into a grid.
pub fn box_grid<T: Real>(min: Vec3<T>, max: Vec3<T>, divisions: [usize; 3]) -> TriMesh<T> {
    let n = divisions.map(|d| d.max(1));
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vertex = |lat: [usize; 3], vertices: &mut Vec<Vec3<T>>| -> u32 {
        *index.entry(lat).or_insert_with(|| {
            let coord = |k: usize| {
                let f = T::from_usize_lossy(lat[k]) / T::from_usize_lossy(n[k]);
                min[k] + (max[k] - min[k]) * f
            };
            vertices.push(Vec3::new(coord(0), coord(1), coord(2)));
            (vertices.len() - 1) as u32
        })
    };
    // (axis, u, v) with u x v = +axis
    for (axis, u, v) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
        for high in [false, true] {
            let (u, v) = if high { (u, v) } else { (v, u) };
            for i in 0..n[u] {
                for j in 0..n[v] {
                    let mut corner = |di: usize, dj: usize| {
                        let mut lat = [0usize; 3];
                        lat[axis] = if high { n[axis] } else { 0 };
                        lat[u] = i + di;
                        lat[v] = j + dj;
                        vertex(lat, &mut vertices)
                    };
                    let p00 = corner(0, 0);
                    let p10 = corner(1, 0);
                    let p11 = corner(1, 1);
                    let p01 = corner(0, 1);
                    triangles.push([p00, p10, p11]);
                    triangles.push([p00, p11, p01]);
                }
            }
        }
    }
    TriMesh::from_parts(vertices, triangles)
}

/// Icosphere centered at the origin. `subdivisions = 2` gives 320 triangles, `3` gives 1280.
pub fn icosphere<T: Real>(radius: T, subdivisions: u32) -> TriMesh<T> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw: [[f64; 3]; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<[f64; 3]> = raw
        .iter()
        .map(|v| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a as usize], verts[b as usize]);
                let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
                let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices: Vec<Vec3<T>> = verts
        .iter()
        .map(|v| Vec3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2])) * radius)
        .collect();
    let mut mesh = TriMesh::from_parts(vertices, faces);
    orient_outward(&mut mesh, |_| Vec3::zero());
    mesh
}

/// Capsule around the segment `start -> end` with hemispherical caps.
///
/// `around` vertices per ring, `cap_rings` latitude rings per cap (excluding
/// the equator) and `body_rings` extra rings along the cylinder.
pub fn capsule<T: Real>(
    start: Vec3<T>,
    end: Vec3<T>,
    radius: T,
    around: usize,
    cap_rings: usize,
    body_rings: usize,
) -> TriMesh<T> {
    let axis = end - start;
    let length = axis.norm();
    let d = axis * (T::one() / length);
    // Orthonormal frame (d, e1, e2).
    let helper = if d.y.abs() < T::lit(0.9) { Vec3::new(T::zero(), T::one(), T::zero()) } else { Vec3::new(T::one(), T::zero(), T::zero()) };
    let e1 = d.cross(helper).normalized();
    let e2 = d.cross(e1);

    // (offset along axis, ring radius)
    let mut rings: Vec<(T, T)> = Vec::new();
    let half_pi = T::FRAC_PI_2();
    for k in 1..=cap_rings {
        let a = half_pi * T::from_usize_lossy(k) / T::from_usize_lossy(cap_rings + 1);
        rings.push((-radius * a.cos(), radius * a.sin()));
    }
    for k in 0..=body_rings + 1 {
        rings.push((length * T::from_usize_lossy(k) / T::from_usize_lossy(body_rings + 1), radius));
    }
    for k in (1..=cap_rings).rev() {
        let a = half_pi * T::from_usize_lossy(k) / T::from_usize_lossy(cap_rings + 1);
        rings.push((length + radius * a.cos(), radius * a.sin()));
    }

    let mut vertices = Vec::with_capacity(rings.len() * around + 2);
    vertices.push(start - d * radius);
    for &(x, rho) in &rings {
        for j in 0..around {
            let ang = T::TAU() * T::from_usize_lossy(j) / T::from_usize_lossy(around);
            let (s, c) = ang.sin_cos();
            vertices.push(start + d * x + e1 * (rho * c) + e2 * (rho * s));
        }
    }
    vertices.push(end + d * radius);
    let last = (vertices.len() - 1) as u32;
    let ring = |r: usize, j: usize| (1 + r * around + (j % around)) as u32;
    let mut triangles = Vec::new();
    for j in 0..around {
        triangles.push([0, ring(0, j + 1), ring(0, j)]);
    }
    for r in 0..rings.len() - 1 {
        for j in 0..around {
            let (a, b, c, e) = (ring(r, j), ring(r, j + 1), ring(r + 1, j + 1), ring(r + 1, j));
            triangles.push([a, b, c]);
            triangles.push([a, c, e]);
        }
    }
    let r_last = rings.len() - 1;
    for j in 0..around {
        triangles.push([last, ring(r_last, j), ring(r_last, j + 1)]);
    }
    let mut mesh = TriMesh::from_parts(vertices, triangles);
    orient_outward(&mut mesh, |p| {
        let t = ((p - start).dot(d)).max(T::zero()).min(length);
        start + d * t
    });
    mesh
}

/// Flips triangles whose normal points toward `core(centroid)`.
fn orient_outward<T: Real>(mesh: &mut TriMesh<T>, core: impl Fn(Vec3<T>) -> Vec3<T>) {
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let centroid = (a + b + c) * T::lit(1.0 / 3.0);
        let n = (b - a).cross(c - a);
        if n.dot(centroid - core(centroid)) < T::zero() {
            mesh.triangles[t].swap(1, 2);
        }
    }
}

/// Mirror image across the `x = 0` plane with winding reversed to stay outward.
pub fn mirror_x<T: Real>(mesh: &TriMesh<T>) -> TriMesh<T> {
    TriMesh::from_parts(
        mesh.vertices.iter().map(|v| Vec3::new(-v.x, v.y, v.z)).collect(),
        mesh.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
    )
}
