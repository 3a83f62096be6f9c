//! Pinhole camera at the origin looking down `-z`, and silhouette rendering.
//!
//! Soft silhouettes are differentiable and recorded on a tape as one fused node;
//! hard silhouettes are exact binary coverage used as an oracle and for export.

mod image;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use image::{GrayImage, ImageError};
pub use raster::{pixel_center, point_in_triangle, SOFT_OP_NAME};

use crate::autodiff::{AutodiffError, Tape, VarId};
use crate::geometry::TriMesh;
use crate::hand_rig::VarMesh;
use crate::math::Vec3;
use crate::scalar::Real;
use raster::{rasterize_hard, SoftRaster, SoftRasterOp};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid render settings: {0}")]
    Settings(String),
    #[error("no meshes to render")]
    NoMeshes,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Fixed pinhole camera. Position is the origin and the view direction `-z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    /// Vertical field of view, degrees.
    pub fov_y_deg: f64,
    pub near: f64,
    pub far: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Self { fov_y_deg: 60.0, near: 0.05, far: 10.0, height: 256, width: 256 }
    }
}

impl Camera {
    pub fn with_resolution(height: usize, width: usize) -> Self {
        Self { height, width, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fov_y_deg > 10.0 && self.fov_y_deg < 120.0) {
            return Err(RenderError::Camera(format!("fov_y_deg must be in (10, 120), got {}", self.fov_y_deg)));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(RenderError::Camera(format!("need 0 < near < far, got near {} far {}", self.near, self.far)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(RenderError::Camera("resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// NDC scale factors `(f / aspect, f)` with `f = 1 / tan(fov / 2)`.
    fn scales<T: Real>(&self) -> (T, T) {
        let f = 1.0 / (self.fov_y_deg.to_radians() / 2.0).tan();
        (T::lit(f / self.aspect()), T::lit(f))
    }

    fn in_depth_range<T: Real>(&self, z: T) -> bool {
        let depth = -z;
        depth >= T::lit(self.near) && depth <= T::lit(self.far)
    }

    /// `(x_ndc, y_ndc, depth)`, or `None` outside the near/far range.
    pub fn project_point<T: Real>(&self, p: Vec3<T>) -> Option<[T; 3]> {
        if !self.in_depth_range(p.z) {
            return None;
        }
        let (sx, sy) = self.scales::<T>();
        let depth = p.z * -T::one();
        Some([p.x / depth * sx, p.y / depth * sy, depth])
    }

    /// Differentiable projection; the same arithmetic as [`Camera::project_point`].
    pub fn project<T: Real>(&self, p: [VarId; 3], tape: &mut Tape<T>) -> Result<Option<[VarId; 3]>, AutodiffError> {
        if !self.in_depth_range(tape.value(p[2])) {
            return Ok(None);
        }
        let (sx, sy) = self.scales::<T>();
        let depth = tape.mul_const(p[2], -T::one());
        let x = tape.div(p[0], depth)?;
        let y = tape.div(p[1], depth)?;
        Ok(Some([tape.mul_const(x, sx), tape.mul_const(y, sy), depth]))
    }
}

/// Camera plus an optional directional light used only by figure exports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewingConfig {
    pub camera: Camera,
    #[serde(default)]
    pub light: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Edge softness in squared NDC units.
    pub sigma: f64,
    /// Triangles reach `band * sqrt(sigma)` NDC beyond their bounds.
    pub band: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { sigma: 1e-4, band: 3.0 }
    }
}

impl RenderSettings {
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(RenderError::Settings(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.band > 0.0 && self.band.is_finite()) {
            return Err(RenderError::Settings(format!("band must be positive, got {}", self.band)));
        }
        Ok(())
    }
}

/// NDC vertices and the surviving triangles of several meshes, concatenated.
struct Projected<V, T> {
    vertices: Vec<V>,
    ndc: Vec<[T; 2]>,
    triangles: Vec<[u32; 3]>,
}

fn gather<V: Copy, T: Real>(meshes: &[(&[Option<(V, [T; 2])>], &[[u32; 3]])]) -> Projected<V, T> {
    let mut out = Projected { vertices: Vec::new(), ndc: Vec::new(), triangles: Vec::new() };
    for (verts, tris) in meshes {
        let mut remap = vec![u32::MAX; verts.len()];
        for tri in tris.iter() {
            if tri.iter().any(|&i| verts[i as usize].is_none()) {
                continue;
            }
            let mapped = tri.map(|i| {
                let i = i as usize;
                if remap[i] == u32::MAX {
                    let (v, ndc) = verts[i].expect("checked above");
                    remap[i] = out.ndc.len() as u32;
                    out.vertices.push(v);
                    out.ndc.push(ndc);
                }
                remap[i]
            });
            out.triangles.push(mapped);
        }
    }
    out
}

/// Output of [`render_silhouette_soft`]: one tape variable per pixel, row-major.
#[derive(Clone, Debug)]
pub struct SoftRender<T> {
    pub pixels: Vec<VarId>,
    pub image: GrayImage<T>,
    /// Number of (pixel, triangle) contributions evaluated.
    pub contributions: usize,
}

/// Differentiable soft silhouette of tape-resident meshes.
///
/// Triangles with a vertex outside the camera depth range are culled.
pub fn render_silhouette_soft<T: Real>(
    meshes: &[&VarMesh],
    camera: &Camera,
    settings: &RenderSettings,
    tape: &mut Tape<T>,
) -> Result<SoftRender<T>, RenderError> {
    if meshes.is_empty() {
        return Err(RenderError::NoMeshes);
    }
    camera.validate()?;
    settings.validate()?;
    let mut projected: Vec<Vec<Option<([VarId; 2], [T; 2])>>> = Vec::with_capacity(meshes.len());
    for m in meshes {
        let mut pv = Vec::with_capacity(m.vertices.len());
        for &v in &m.vertices {
            pv.push(camera.project(v, tape)?.map(|[x, y, _]| ([x, y], [tape.value(x), tape.value(y)])));
        }
        projected.push(pv);
    }
    let parts: Vec<_> = projected.iter().zip(meshes).map(|(p, m)| (p.as_slice(), m.triangles.as_slice())).collect();
    let g = gather(&parts);
    let mut raster = SoftRaster::new(g.triangles, camera.height, camera.width, T::lit(settings.sigma), T::lit(settings.band));
    let values = raster.run(&g.ndc);
    let contributions = raster.contributions();
    let inputs: Vec<VarId> = g.vertices.iter().flatten().copied().collect();
    let pixels = tape.record_fused(Box::new(SoftRasterOp { raster }), inputs, &values);
    let image = GrayImage::new(camera.height, camera.width, values)?;
    Ok(SoftRender { pixels, image, contributions })
}

/// Soft silhouette of plain meshes; bit-identical to the taped render of the same vertices.
pub fn render_soft_values<T: Real>(
    meshes: &[&TriMesh<T>],
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<GrayImage<T>, RenderError> {
    if meshes.is_empty() {
        return Err(RenderError::NoMeshes);
    }
    camera.validate()?;
    settings.validate()?;
    let g = project_meshes(meshes, camera);
    let mut raster = SoftRaster::new(g.triangles, camera.height, camera.width, T::lit(settings.sigma), T::lit(settings.band));
    let values = raster.run(&g.ndc);
    Ok(GrayImage::new(camera.height, camera.width, values)?)
}

fn project_meshes<T: Real>(meshes: &[&TriMesh<T>], camera: &Camera) -> Projected<(), T> {
    let projected: Vec<Vec<Option<((), [T; 2])>>> = meshes
        .iter()
        .map(|m| m.vertices.iter().map(|&v| camera.project_point(v).map(|[x, y, _]| ((), [x, y]))).collect())
        .collect();
    let parts: Vec<_> = projected.iter().zip(meshes).map(|(p, m)| (p.as_slice(), m.triangles.as_slice())).collect();
    gather(&parts)
}

/// Binary silhouette: 1 where a pixel center lies inside any projected triangle.
pub fn render_silhouette_hard<T: Real>(meshes: &[&TriMesh<T>], camera: &Camera) -> Result<GrayImage<T>, RenderError> {
    if meshes.is_empty() {
        return Err(RenderError::NoMeshes);
    }
    camera.validate()?;
    let g = project_meshes(meshes, camera);
    Ok(GrayImage::new(camera.height, camera.width, rasterize_hard(&g.ndc, &g.triangles, camera.height, camera.width))?)
}

/// Figure-style shadow: dark silhouette on a lit wall whose brightness follows the
/// light's incidence on a wall facing `+z`.
pub fn wall_composite<T: Real>(silhouette: &GrayImage<T>, view: &ViewingConfig) -> GrayImage<T> {
    let lit = view.light.map_or(0.9, |l| {
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        if n > 0.0 {
            0.3 + 0.6 * (-l[2] / n).max(0.0)
        } else {
            0.9
        }
    });
    let shadow = 0.12;
    let px = silhouette.pixels().iter().map(|&s| T::lit(lit + (shadow - lit) * s.as_f64())).collect();
    GrayImage::new(silhouette.height(), silhouette.width(), px).expect("blend of values in [0, 1]")
}
