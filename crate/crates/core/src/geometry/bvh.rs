use crate::math::Vec3;
use crate::scalar::Real;

use super::{GeometryError, TriMesh};

const LEAF_SIZE: usize = 4;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn empty() -> Self {
        let inf = T::infinity();
        Self { min: Vec3::new(inf, inf, inf), max: Vec3::new(-inf, -inf, -inf) }
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3<T>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    #[inline]
    pub fn grow(&mut self, p: Vec3<T>) {
        self.min = self.min.min_elem(p);
        self.max = self.max.max_elem(p);
    }

    pub fn union(&self, o: &Self) -> Self {
        Self { min: self.min.min_elem(o.min), max: self.max.max_elem(o.max) }
    }

    pub fn contains_box(&self, o: &Self) -> bool {
        (0..3).all(|k| self.min[k] <= o.min[k] && o.max[k] <= self.max[k])
    }

    #[inline]
    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn intersects(&self, o: &Self) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::lit(0.5)
    }

    /// Squared distance from `p` to the box (zero inside).
    #[inline]
    pub fn distance_squared(&self, p: Vec3<T>) -> T {
        let mut d = T::zero();
        for k in 0..3 {
            let e = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                T::zero()
            };
            d += e * e;
        }
        d
    }

    /// Slab test for the ray `origin + t * dir`, `t >= 0`.
    #[inline]
    pub fn hit_by_ray(&self, origin: Vec3<T>, inv_dir: Vec3<T>) -> bool {
        let mut tmin = T::zero();
        let mut tmax = T::infinity();
        for k in 0..3 {
            let t1 = (self.min[k] - origin[k]) * inv_dir[k];
            let t2 = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            // NaN from 0 * inf (origin on the slab plane with a zero direction) keeps the box.
            if lo > tmin {
                tmin = lo;
            }
            if hi < tmax {
                tmax = hi;
            }
        }
        tmin <= tmax
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BvhNode<T> {
    Inner { bounds: Aabb<T>, left: u32, right: u32 },
    Leaf { bounds: Aabb<T>, start: u32, count: u32 },
}

impl<T: Real> BvhNode<T> {
    pub fn bounds(&self) -> &Aabb<T> {
        match self {
            BvhNode::Inner { bounds, .. } | BvhNode::Leaf { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding volume hierarchy over the triangles of a mesh.
///
/// Node 0 is the root. Leaves reference ranges of [`Bvh::triangle_order`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bvh<T> {
    pub nodes: Vec<BvhNode<T>>,
    pub triangle_order: Vec<u32>,
}

impl<T: Real> Bvh<T> {
    pub fn build(mesh: &TriMesh<T>) -> Result<Self, GeometryError> {
        if mesh.triangles.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let boxes: Vec<Aabb<T>> =
            (0..mesh.triangles.len()).map(|t| Aabb::from_points(mesh.corners(t))).collect();
        let centroids: Vec<Vec3<T>> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * mesh.triangles.len() / LEAF_SIZE + 1);
        nodes.push(BvhNode::Leaf { bounds: Aabb::empty(), start: 0, count: 0 });
        build_node(&mut nodes, 0, &mut order, 0, &boxes, &centroids);
        Ok(Self { nodes, triangle_order: order })
    }

    pub fn root_bounds(&self) -> &Aabb<T> {
        self.nodes[0].bounds()
    }

    /// Visits every leaf triangle whose node boxes the ray passes through.
    pub fn for_each_ray_candidate(&self, origin: Vec3<T>, dir: Vec3<T>, mut f: impl FnMut(usize)) {
        let inv = Vec3::new(T::one() / dir.x, T::one() / dir.y, T::one() / dir.z);
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if !node.bounds().hit_by_ray(origin, inv) {
                continue;
            }
            match *node {
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                BvhNode::Leaf { start, count, .. } => {
                    for &t in &self.triangle_order[start as usize..(start + count) as usize] {
                        f(t as usize);
                    }
                }
            }
        }
    }

    /// Depth-first nearest search. `f` returns the squared distance of a triangle;
    /// nodes farther than the best found so far are pruned.
    pub fn nearest(&self, p: Vec3<T>, mut f: impl FnMut(usize) -> T) -> T {
        let mut best = T::infinity();
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if node.bounds().distance_squared(p) > best {
                continue;
            }
            match *node {
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left as usize].bounds().distance_squared(p);
                    let dr = self.nodes[right as usize].bounds().distance_squared(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
                BvhNode::Leaf { start, count, .. } => {
                    for &t in &self.triangle_order[start as usize..(start + count) as usize] {
                        let d = f(t as usize);
                        if d < best {
                            best = d;
                        }
                    }
                }
            }
        }
        best
    }
}

fn build_node<T: Real>(
    nodes: &mut Vec<BvhNode<T>>,
    index: usize,
    order: &mut [u32],
    offset: usize,
    boxes: &[Aabb<T>],
    centroids: &[Vec3<T>],
) {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in order.iter() {
        bounds = bounds.union(&boxes[t as usize]);
        cbounds.grow(centroids[t as usize]);
    }
    if order.len() <= LEAF_SIZE {
        nodes[index] = BvhNode::Leaf { bounds, start: offset as u32, count: order.len() as u32 };
        return;
    }
    let e = cbounds.extent();
    let axis = if e.x >= e.y && e.x >= e.z {
        0
    } else if e.y >= e.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let (ca, cb) = (centroids[a as usize][axis], centroids[b as usize][axis]);
        ca.partial_cmp(&cb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let left = nodes.len();
    nodes.push(BvhNode::Leaf { bounds: Aabb::empty(), start: 0, count: 0 });
    let right = nodes.len();
    nodes.push(BvhNode::Leaf { bounds: Aabb::empty(), start: 0, count: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    build_node(nodes, left, lo, offset, boxes, centroids);
    build_node(nodes, right, hi, offset + mid, boxes, centroids);
    nodes[index] = BvhNode::Inner { bounds, left: left as u32, right: right as u32 };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn single_triangle_is_one_leaf() {
        let m = TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&m).unwrap();
        assert_eq!(bvh.nodes.len(), 1);
        assert!(matches!(bvh.nodes[0], BvhNode::Leaf { count: 1, .. }));
    }

    #[test]
    fn cube_root_box_is_input_bounds() {
        let cube = shapes::unit_cube::<f64>().translated(Vec3::new(0.5, 0.5, 0.5));
        let bvh = Bvh::build(&cube).unwrap();
        let b = bvh.root_bounds();
        assert_eq!(b.min, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(b.max, Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let m = TriMesh::<f64>::from_parts(vec![], vec![]);
        assert!(matches!(Bvh::build(&m), Err(GeometryError::EmptyMesh)));
    }

    #[test]
    fn tree_structure_invariants() {
        let sphere = shapes::icosphere::<f64>(1.0, 3);
        let bvh = Bvh::build(&sphere).unwrap();
        let mut seen = vec![0u32; sphere.triangles.len()];
        for node in &bvh.nodes {
            match node {
                BvhNode::Inner { bounds, left, right } => {
                    assert!(bounds.contains_box(bvh.nodes[*left as usize].bounds()));
                    assert!(bounds.contains_box(bvh.nodes[*right as usize].bounds()));
                }
                BvhNode::Leaf { start, count, bounds } => {
                    for &t in &bvh.triangle_order[*start as usize..(*start + *count) as usize] {
                        seen[t as usize] += 1;
                        assert!(bounds.contains_box(&Aabb::from_points(sphere.corners(t as usize))));
                    }
                }
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }
}
