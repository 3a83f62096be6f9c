use crate::math::Vec3;
use crate::scalar::Real;

use super::{Bvh, TriMesh};

/// Fixed inside-test ray direction `(1, 0.5^3, 0.25^7)` before normalization.
/// The irregular components keep the ray off mesh edges aligned with the axes.
pub const INSIDE_RAY_DIRECTION: [f64; 3] = [1.0, 0.125, 0.000_061_035_156_25];

/// An intruding vertex strictly inside a host mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penetration<T> {
    pub vertex_index: usize,
    /// Distance to the host surface, meters.
    pub depth: T,
    pub nearest_point: Vec3<T>,
}

/// Möller-Trumbore intersection. Returns `(t, facing)` where `facing` is the
/// sign of `dot(normal, dir)` for a hit at `t > 0`.
#[inline]
fn ray_triangle<T: Real>(origin: Vec3<T>, dir: Vec3<T>, [a, b, c]: [Vec3<T>; 3]) -> Option<(T, i32)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det == T::zero() {
        return None;
    }
    let inv = T::one() / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = e2.dot(qvec) * inv;
    if t <= T::zero() {
        return None;
    }
    // det = dot(e1, dir x e2) = -dot(dir, e1 x e2)
    Some((t, if det < T::zero() { 1 } else { -1 }))
}

fn inside_dir<T: Real>() -> Vec3<T> {
    let [x, y, z] = INSIDE_RAY_DIRECTION;
    Vec3::new(T::lit(x), T::lit(y), T::lit(z)).normalized()
}

/// All hits of the fixed inside-test ray from `p`, as `(triangle, t, facing)`,
/// brute force over every triangle.
pub fn ray_triangle_hits<T: Real>(mesh: &TriMesh<T>, p: Vec3<T>) -> Vec<(usize, T, i32)> {
    let dir = inside_dir();
    (0..mesh.triangles.len())
        .filter_map(|t| ray_triangle(p, dir, mesh.corners(t)).map(|(d, s)| (t, d, s)))
        .collect()
}

/// Inside test for a closed, consistently outward-oriented mesh.
///
/// Casts the fixed ray and sums signed crossings, which is the winding number
/// of `p`. On a simple closed surface this equals the crossing parity; on a union
/// of overlapping closed parts it still reports points in the overlap as inside.
pub fn point_inside<T: Real>(mesh: &TriMesh<T>, bvh: &Bvh<T>, p: Vec3<T>) -> bool {
    if !bvh.root_bounds().contains(p) {
        return false;
    }
    let dir = inside_dir();
    let mut winding = 0i32;
    bvh.for_each_ray_candidate(p, dir, |t| {
        if let Some((_, s)) = ray_triangle(p, dir, mesh.corners(t)) {
            winding += s;
        }
    });
    winding > 0
}

/// Generalized winding number by summed solid angles (van Oosterom-Strackee).
/// Quadratic-cost reference for [`point_inside`].
pub fn winding_number<T: Real>(mesh: &TriMesh<T>, p: Vec3<T>) -> T {
    let mut total = T::zero();
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(b.cross(c));
        let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += T::lit(2.0) * num.atan2(den);
    }
    total / (T::lit(4.0) * T::PI())
}

/// Closest point to `p` on triangle `abc` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle<T: Real>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Vec3<T> {
    let zero = T::zero();
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Nearest point on the mesh surface and its distance.
pub fn nearest_surface_point<T: Real>(mesh: &TriMesh<T>, bvh: &Bvh<T>, p: Vec3<T>) -> (Vec3<T>, T) {
    let mut best_point = p;
    let mut best_d = T::infinity();
    bvh.nearest(p, |t| {
        let [a, b, c] = mesh.corners(t);
        let q = closest_point_on_triangle(p, a, b, c);
        let d = (q - p).norm_squared();
        // Strict comparison keeps the first triangle reached at equal distance.
        if d < best_d {
            best_d = d;
            best_point = q;
        }
        d
    });
    (best_point, best_d.sqrt())
}

/// Every intruder vertex strictly inside `host`, with its depth below the host surface.
pub fn detect_penetrations<T: Real>(
    intruder: &TriMesh<T>,
    host: &TriMesh<T>,
    host_bvh: &Bvh<T>,
) -> Vec<Penetration<T>> {
    let bounds = host_bvh.root_bounds();
    intruder
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, &v)| bounds.contains(v))
        .filter(|(_, &v)| point_inside(host, host_bvh, v))
        .filter_map(|(i, &v)| {
            let (q, d) = nearest_surface_point(host, host_bvh, v);
            (d > T::zero()).then_some(Penetration { vertex_index: i, depth: d, nearest_point: q })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn centered_cube() -> (TriMesh<f64>, Bvh<f64>) {
        let m = shapes::unit_cube::<f64>();
        let b = Bvh::build(&m).unwrap();
        (m, b)
    }

    #[test]
    fn cube_center_inside_far_point_outside() {
        let (m, b) = centered_cube();
        assert!(point_inside(&m, &b, Vec3::new(0.0, 0.0, 0.0)));
        assert!(!point_inside(&m, &b, Vec3::new(2.0, 0.0, 0.0)));
        assert!(!point_inside(&m, &b, Vec3::new(-0.6, 0.1, 0.1)));
    }

    #[test]
    fn nearest_on_vertex_and_above_square() {
        let (m, b) = centered_cube();
        let (q, d) = nearest_surface_point(&m, &b, Vec3::new(0.5, 0.5, 0.5));
        assert_eq!(d, 0.0);
        assert_eq!(q, Vec3::new(0.5, 0.5, 0.5));

        let square = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let sb = Bvh::build(&square).unwrap();
        let (_, d) = nearest_surface_point(&square, &sb, Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn disjoint_cubes_do_not_penetrate() {
        let (a, _) = centered_cube();
        let b = a.translated(Vec3::new(3.0, 0.0, 0.0));
        let bb = Bvh::build(&b).unwrap();
        assert!(detect_penetrations(&a, &b, &bb).is_empty());
    }

    #[test]
    fn contained_cube_reports_all_vertices() {
        let small = shapes::unit_cube::<f64>();
        let big = shapes::box_grid::<f64>(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), [1, 1, 1]);
        let bb = Bvh::build(&big).unwrap();
        let pens = detect_penetrations(&small, &big, &bb);
        assert_eq!(pens.len(), 8);
        for p in pens {
            assert!((p.depth - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn closest_point_regions() {
        let a = Vec3::<f64>::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let cp = |p| closest_point_on_triangle(p, a, b, c);
        assert_eq!(cp(Vec3::new(-1.0, -1.0, 0.0)), a);
        assert_eq!(cp(Vec3::new(2.0, -0.5, 0.0)), b);
        assert_eq!(cp(Vec3::new(-0.5, 3.0, 1.0)), c);
        assert_eq!(cp(Vec3::new(0.5, -1.0, 0.0)), Vec3::new(0.5, 0.0, 0.0));
        let q = cp(Vec3::new(0.2, 0.2, 5.0));
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let q = cp(Vec3::new(1.0, 1.0, 0.0));
        assert!((q.x - 0.5).abs() < 1e-15 && (q.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn winding_number_of_closed_cube() {
        let (m, _) = centered_cube();
        assert!((winding_number(&m, Vec3::new(0.1, -0.2, 0.3)) - 1.0).abs() < 1e-12);
        assert!(winding_number(&m, Vec3::new(1.1, -0.2, 0.3)).abs() < 1e-12);
    }
}
