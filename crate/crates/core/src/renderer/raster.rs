//! Rasterization of NDC triangles shared by the soft and hard renderers.

use crate::autodiff::{sigmoid, FusedOp};
use crate::scalar::Real;

pub const SOFT_OP_NAME: &str = "rasterizer";

/// NDC coordinates of the center of pixel `(row, col)`.
#[inline]
pub fn pixel_center<T: Real>(row: usize, col: usize, height: usize, width: usize) -> [T; 2] {
    let x = -T::one() + T::from_usize_lossy(2 * col + 1) / T::from_usize_lossy(width);
    let y = T::one() - T::from_usize_lossy(2 * row + 1) / T::from_usize_lossy(height);
    [x, y]
}

#[inline]
fn cross2<T: Real>(o: [T; 2], a: [T; 2], p: [T; 2]) -> T {
    (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
}

/// Closed point-in-triangle test for either winding. Zero-area triangles contain nothing.
#[inline]
pub fn point_in_triangle<T: Real>(p: [T; 2], [a, b, c]: [[T; 2]; 3]) -> bool {
    let area = cross2(a, b, c);
    if area == T::zero() {
        return false;
    }
    let (e0, e1, e2) = (cross2(a, b, p), cross2(b, c, p), cross2(c, a, p));
    if area > T::zero() {
        e0 >= T::zero() && e1 >= T::zero() && e2 >= T::zero()
    } else {
        e0 <= T::zero() && e1 <= T::zero() && e2 <= T::zero()
    }
}

/// Nearest boundary point of a triangle to `p`.
#[derive(Clone, Copy, Debug)]
struct EdgeHit<T> {
    inside: bool,
    d2: T,
    /// Edge `k` runs from corner `k` to corner `(k + 1) % 3`.
    edge: usize,
    t: T,
    /// `p - q` for the nearest point `q`.
    diff: [T; 2],
}

#[inline]
fn nearest_edge<T: Real>(p: [T; 2], v: [[T; 2]; 3]) -> EdgeHit<T> {
    let mut best = EdgeHit { inside: point_in_triangle(p, v), d2: T::infinity(), edge: 0, t: T::zero(), diff: [T::zero(); 2] };
    for k in 0..3 {
        let (a, b) = (v[k], v[(k + 1) % 3]);
        let e = [b[0] - a[0], b[1] - a[1]];
        let len2 = e[0] * e[0] + e[1] * e[1];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let t = if len2 > T::zero() {
            ((ap[0] * e[0] + ap[1] * e[1]) / len2).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        let diff = [ap[0] - e[0] * t, ap[1] - e[1] * t];
        let d2 = diff[0] * diff[0] + diff[1] * diff[1];
        if d2 < best.d2 {
            best = EdgeHit { d2, edge: k, t, diff, ..best };
        }
    }
    best
}

/// Inclusive pixel index ranges whose centers fall in the NDC box, or `None`.
fn pixel_window<T: Real>(lo: [T; 2], hi: [T; 2], height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (T::from_usize_lossy(width), T::from_usize_lossy(height));
    let half = T::lit(0.5);
    // center x_c = -1 + (2c + 1) / W  =>  c = ((x + 1) W - 1) / 2
    let c0 = (((lo[0] + T::one()) * w - T::one()) * half).ceil();
    let c1 = (((hi[0] + T::one()) * w - T::one()) * half).floor();
    let r0 = (((T::one() - hi[1]) * h - T::one()) * half).ceil();
    let r1 = (((T::one() - lo[1]) * h - T::one()) * half).floor();
    if !(c0.is_finite() && c1.is_finite() && r0.is_finite() && r1.is_finite()) {
        return None;
    }
    let c0 = c0.max(T::zero());
    let r0 = r0.max(T::zero());
    let c1 = c1.min(w - T::one());
    let r1 = r1.min(h - T::one());
    if c0 > c1 || r0 > r1 {
        return None;
    }
    Some((r0.to_usize()?, r1.to_usize()?, c0.to_usize()?, c1.to_usize()?))
}

fn bounds<T: Real>(v: [[T; 2]; 3]) -> ([T; 2], [T; 2]) {
    let lo = [v[0][0].min(v[1][0]).min(v[2][0]), v[0][1].min(v[1][1]).min(v[2][1])];
    let hi = [v[0][0].max(v[1][0]).max(v[2][0]), v[0][1].max(v[1][1]).max(v[2][1])];
    (lo, hi)
}

/// Binary coverage of pixel centers by any triangle.
pub(crate) fn rasterize_hard<T: Real>(verts: &[[T; 2]], tris: &[[u32; 3]], height: usize, width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); height * width];
    for tri in tris {
        let v = tri.map(|i| verts[i as usize]);
        let (lo, hi) = bounds(v);
        let Some((r0, r1, c0, c1)) = pixel_window(lo, hi, height, width) else { continue };
        for r in r0..=r1 {
            for c in c0..=c1 {
                let px = r * width + c;
                if out[px] == T::zero() && point_in_triangle(pixel_center(r, c, height, width), v) {
                    out[px] = T::one();
                }
            }
        }
    }
    out
}

/// Soft silhouette of NDC triangles with a hand-written adjoint.
///
/// Each triangle covers pixel `p` with `D = (s(z) - s(-k^2)) / (1 - s(-k^2))`, where
/// `s` is the logistic function, `z = +-d^2 / sigma` and `d` is the distance from `p`
/// to the triangle boundary. Pixels farther than `k * sqrt(sigma)` outside a
/// triangle are skipped; the shift makes `D` vanish exactly at that cutoff. Pixel
/// values are `1 - prod(1 - D)` in triangle order.
pub(crate) struct SoftRaster<T> {
    height: usize,
    width: usize,
    sigma: T,
    band: T,
    band2: T,
    floor: T,
    tris: Vec<[u32; 3]>,
    verts: Vec<[T; 2]>,
    /// CSR over pixels; entries of one pixel are in triangle order.
    entry_start: Vec<u32>,
    entry_tri: Vec<u32>,
    entry_cov: Vec<T>,
}

impl<T: Real> SoftRaster<T> {
    pub(crate) fn new(tris: Vec<[u32; 3]>, height: usize, width: usize, sigma: T, band: T) -> Self {
        Self {
            height,
            width,
            sigma,
            band,
            band2: band * band,
            floor: sigmoid(-band * band),
            tris,
            verts: Vec::new(),
            entry_start: Vec::new(),
            entry_tri: Vec::new(),
            entry_cov: Vec::new(),
        }
    }

    #[inline]
    fn coverage(&self, hit: &EdgeHit<T>) -> Option<(T, T)> {
        if !hit.inside && hit.d2 > self.band2 * self.sigma {
            return None;
        }
        let z = if hit.inside { hit.d2 / self.sigma } else { -hit.d2 / self.sigma };
        let s = sigmoid(z);
        let scale = T::one() / (T::one() - self.floor);
        let d = ((s - self.floor) * scale).max(T::zero()).min(T::one());
        Some((d, s * (T::one() - s) * scale))
    }

    /// Rasterizes `verts` (NDC) and keeps the per-pixel contributions for the adjoint.
    pub(crate) fn run(&mut self, verts: &[[T; 2]]) -> Vec<T> {
        self.verts = verts.to_vec();
        let (h, w) = (self.height, self.width);
        let reach = self.band * self.sigma.sqrt();
        let mut raw: Vec<(u32, u32, T)> = Vec::new();
        for (ti, tri) in self.tris.iter().enumerate() {
            let v = tri.map(|i| verts[i as usize]);
            let (lo, hi) = bounds(v);
            let lo = [lo[0] - reach, lo[1] - reach];
            let hi = [hi[0] + reach, hi[1] + reach];
            let Some((r0, r1, c0, c1)) = pixel_window(lo, hi, h, w) else { continue };
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let hit = nearest_edge(pixel_center(r, c, h, w), v);
                    if let Some((d, _)) = self.coverage(&hit) {
                        raw.push(((r * w + c) as u32, ti as u32, d));
                    }
                }
            }
        }
        let mut start = vec![0u32; h * w + 1];
        for &(px, _, _) in &raw {
            start[px as usize + 1] += 1;
        }
        for i in 0..h * w {
            start[i + 1] += start[i];
        }
        let mut cursor = start.clone();
        let mut tri_ids = vec![0u32; raw.len()];
        let mut cov = vec![T::zero(); raw.len()];
        for &(px, ti, d) in &raw {
            let slot = cursor[px as usize] as usize;
            cursor[px as usize] += 1;
            tri_ids[slot] = ti;
            cov[slot] = d;
        }
        let mut out = vec![T::zero(); h * w];
        for (px, o) in out.iter_mut().enumerate() {
            let (s, e) = (start[px] as usize, start[px + 1] as usize);
            if s == e {
                continue;
            }
            let mut keep = T::one();
            for &d in &cov[s..e] {
                keep *= T::one() - d;
            }
            *o = (T::one() - keep).max(T::zero()).min(T::one());
        }
        self.entry_start = start;
        self.entry_tri = tri_ids;
        self.entry_cov = cov;
        out
    }

    /// Number of (pixel, triangle) contributions of the last run.
    pub(crate) fn contributions(&self) -> usize {
        self.entry_tri.len()
    }

    /// Adjoint with respect to the flattened NDC coordinates `[x0, y0, x1, y1, ...]`.
    pub(crate) fn adjoint(&self, out_adj: &[T], in_adj: &mut [T]) {
        let (h, w) = (self.height, self.width);
        let two = T::lit(2.0);
        let mut prefix: Vec<T> = Vec::new();
        for px in 0..h * w {
            let g = out_adj[px];
            let (s, e) = (self.entry_start[px] as usize, self.entry_start[px + 1] as usize);
            if g == T::zero() || s == e {
                continue;
            }
            let cov = &self.entry_cov[s..e];
            // d pixel / d D_j = prod_{k != j} (1 - D_k), via prefix and suffix products.
            prefix.clear();
            let mut acc = T::one();
            for &d in cov {
                prefix.push(acc);
                acc *= T::one() - d;
            }
            let mut suffix = T::one();
            let (r, c) = (px / w, px % w);
            let p = pixel_center(r, c, h, w);
            for j in (0..cov.len()).rev() {
                let g_d = g * prefix[j] * suffix;
                suffix *= T::one() - cov[j];
                if g_d == T::zero() {
                    continue;
                }
                let tri = self.tris[self.entry_tri[s + j] as usize];
                let v = tri.map(|i| self.verts[i as usize]);
                let hit = nearest_edge(p, v);
                let Some((_, dd_dz)) = self.coverage(&hit) else { continue };
                let dz_dd2 = if hit.inside { T::one() / self.sigma } else { -T::one() / self.sigma };
                let g_d2 = g_d * dd_dz * dz_dd2;
                // d2 = |p - a - t (b - a)|^2 at the optimal t.
                let (ia, ib) = (tri[hit.edge] as usize, tri[(hit.edge + 1) % 3] as usize);
                for k in 0..2 {
                    let base = -two * hit.diff[k] * g_d2;
                    in_adj[2 * ia + k] += base * (T::one() - hit.t);
                    in_adj[2 * ib + k] += base * hit.t;
                }
            }
        }
    }
}

/// Tape node wrapping a finished [`SoftRaster`].
pub(crate) struct SoftRasterOp<T> {
    pub(crate) raster: SoftRaster<T>,
}

impl<T: Real> FusedOp<T> for SoftRasterOp<T> {
    fn name(&self) -> &'static str {
        SOFT_OP_NAME
    }

    fn forward(&self, inputs: &[T]) -> Vec<T> {
        let verts: Vec<[T; 2]> = inputs.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let r = &self.raster;
        SoftRaster::new(r.tris.clone(), r.height, r.width, r.sigma, r.band).run(&verts)
    }

    fn backward(&self, out_adj: &[T], in_adj: &mut [T]) {
        self.raster.adjoint(out_adj, in_adj);
    }
}
