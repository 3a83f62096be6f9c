//! The scalar objective: image discrepancy plus interpenetration penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, FusedOp, Tape, VarId};
use crate::geometry::{detect_penetrations, Bvh, GeometryError, TriMesh};
use crate::hand_rig::{forward_kinematics, skin, HandParamVars, HandParams, HandRig, VarMesh, ARTICULATED_JOINTS};
use crate::math::Vec3;
use crate::renderer::{render_silhouette_soft, Camera, GrayImage, ImageError, RenderError, RenderSettings};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("mesh {index} is render-only and cannot host penetration queries: {source}")]
    RenderOnly {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("invalid loss weight {name} = {value}")]
    Weight { name: &'static str, value: f64 },
    #[error("expected {expected} pixel variables, found {found}")]
    PixelCount { expected: usize, found: usize },
}

/// Normalization of the image term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageNorm {
    /// `sqrt(sum (r - t)^2)`
    #[default]
    Root,
    /// `sum (r - t)^2 / (H W)`
    MeanSquared,
    /// `sum (r - t)^2`
    SumSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_image: f64,
    /// The pen term is in square meters, so millimeter overlaps need a large weight to
    /// register against a pixel-scale image term.
    pub w_pen: f64,
    /// Quadratic penalty outside the joint limits. Zero keeps limits as a hard projection only.
    pub w_limit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_image: 1.0, w_pen: 1e5, w_limit: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [("w_image", self.w_image), ("w_pen", self.w_pen), ("w_limit", self.w_limit)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }
}

/// One evaluation of the objective. `total = w_image * image_term + w_pen * pen_term + w_limit * limit_term`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub total: f64,
    pub image_term: f64,
    pub pen_term: f64,
    pub limit_term: f64,
}

struct ImageNormOp<T> {
    target: Vec<T>,
    diff: Vec<T>,
    norm: ImageNorm,
    value: T,
}

fn image_norm_value<T: Real>(diff: &[T], norm: ImageNorm) -> T {
    let ss = diff.iter().fold(T::zero(), |acc, &d| acc + d * d);
    match norm {
        ImageNorm::Root => ss.sqrt(),
        ImageNorm::MeanSquared => ss / T::from_usize_lossy(diff.len().max(1)),
        ImageNorm::SumSquared => ss,
    }
}

impl<T: Real> FusedOp<T> for ImageNormOp<T> {
    fn name(&self) -> &'static str {
        "image_norm"
    }

    fn forward(&self, inputs: &[T]) -> Vec<T> {
        let diff: Vec<T> = inputs.iter().zip(&self.target).map(|(&r, &t)| r - t).collect();
        vec![image_norm_value(&diff, self.norm)]
    }

    fn backward(&self, out_adj: &[T], in_adj: &mut [T]) {
        let g = out_adj[0];
        let scale = match self.norm {
            // The norm is not differentiable at zero; the zero subgradient is used there.
            ImageNorm::Root if self.value == T::zero() => return,
            ImageNorm::Root => g / self.value,
            ImageNorm::MeanSquared => g * T::lit(2.0) / T::from_usize_lossy(self.diff.len().max(1)),
            ImageNorm::SumSquared => g * T::lit(2.0),
        };
        for (a, &d) in in_adj.iter_mut().zip(&self.diff) {
            *a += d * scale;
        }
    }
}

/// Image discrepancy between a target and taped rendered pixels (row-major).
pub fn image_l2<T: Real>(
    target: &GrayImage<T>,
    rendered: &[VarId],
    norm: ImageNorm,
    tape: &mut Tape<T>,
) -> Result<VarId, LossError> {
    let n = target.height() * target.width();
    if rendered.len() != n {
        return Err(LossError::PixelCount { expected: n, found: rendered.len() });
    }
    let diff: Vec<T> = rendered.iter().zip(target.pixels()).map(|(&r, &t)| tape.value(r) - t).collect();
    let value = image_norm_value(&diff, norm);
    let op = ImageNormOp { target: target.pixels().to_vec(), diff, norm, value };
    Ok(tape.record_fused(Box::new(op), rendered.to_vec(), &[value])[0])
}

/// Plain-value image term, identical to [`image_l2`].
pub fn image_distance<T: Real>(target: &GrayImage<T>, rendered: &GrayImage<T>, norm: ImageNorm) -> Result<T, LossError> {
    target.same_size(rendered)?;
    let diff: Vec<T> = rendered.pixels().iter().zip(target.pixels()).map(|(&r, &t)| r - t).collect();
    Ok(image_norm_value(&diff, norm))
}

fn sum_or_zero<T: Real>(terms: &[VarId], tape: &mut Tape<T>) -> VarId {
    if terms.is_empty() {
        tape.constant(T::zero())
    } else {
        tape.sum(terms)
    }
}

/// `|v - q|^2` with the host point `q` held fixed.
fn depth_squared<T: Real>(v: [VarId; 3], q: Vec3<T>, tape: &mut Tape<T>) -> VarId {
    let d = [0, 1, 2].map(|k| tape.add_const(v[k], -q[k]));
    tape.dot(&d, &d)
}

/// Depth-squared terms of `intruder` vertices (by index) inside `host`.
fn intrusion_terms<T: Real>(
    intruder: &VarMesh,
    intruder_values: &TriMesh<T>,
    candidates: Option<&[u32]>,
    host: &TriMesh<T>,
    host_bvh: &Bvh<T>,
    tape: &mut Tape<T>,
    out: &mut Vec<VarId>,
) {
    let probe = match candidates {
        None => intruder_values.clone(),
        Some(ids) => TriMesh::from_parts(ids.iter().map(|&i| intruder_values.vertices[i as usize]).collect(), Vec::new()),
    };
    for p in detect_penetrations(&probe, host, host_bvh) {
        let vi = candidates.map_or(p.vertex_index, |ids| ids[p.vertex_index] as usize);
        out.push(depth_squared(intruder.vertices[vi], p.nearest_point, tape));
    }
}

fn watertight<T: Real>(index: usize, mesh: &TriMesh<T>) -> Result<Bvh<T>, LossError> {
    mesh.check_watertight().map_err(|source| LossError::RenderOnly { index, source })?;
    Bvh::build(mesh).map_err(|source| LossError::RenderOnly { index, source })
}

/// Cross penetration between two closed meshes, both directions:
/// `sum depth^2 (a in b) + sum depth^2 (b in a)`.
pub fn penetration_loss<T: Real>(a: &VarMesh, b: &VarMesh, tape: &mut Tape<T>) -> Result<VarId, LossError> {
    let (va, vb) = (a.values(tape), b.values(tape));
    let (ba, bb) = (watertight(0, &va)?, watertight(1, &vb)?);
    let ab = cross_sum(a, &va, &vb, &bb, tape);
    let ba_sum = cross_sum(b, &vb, &va, &ba, tape);
    Ok(tape.add(ab, ba_sum))
}

fn cross_sum<T: Real>(intruder: &VarMesh, iv: &TriMesh<T>, host: &TriMesh<T>, host_bvh: &Bvh<T>, tape: &mut Tape<T>) -> VarId {
    let mut terms = Vec::new();
    if host_bvh.root_bounds().intersects(&iv.bounds()) {
        intrusion_terms(intruder, iv, None, host, host_bvh, tape, &mut terms);
    }
    sum_or_zero(&terms, tape)
}

/// Self penetration of one skinned hand, between non-adjacent bones.
pub fn self_penetration<T: Real>(rig: &HandRig<T>, mesh: &VarMesh, values: &TriMesh<T>, tape: &mut Tape<T>) -> VarId {
    let bones = rig.bones();
    let posed: Vec<TriMesh<T>> = bones
        .iter()
        .map(|b| {
            TriMesh::from_parts(b.vertex_ids.iter().map(|&i| values.vertices[i as usize]).collect(), b.triangles.clone())
        })
        .collect();
    let bounds: Vec<_> = posed.iter().map(|m| m.bounds()).collect();
    let mut bvhs: Vec<Option<Bvh<T>>> = (0..bones.len()).map(|_| None).collect();
    let mut terms = Vec::new();
    for a in bones {
        if a.owned_vertices.is_empty() {
            continue;
        }
        let owned_bounds = crate::geometry::Aabb::from_points(a.owned_vertices.iter().map(|&i| values.vertices[i as usize]));
        for (hi, h) in bones.iter().enumerate() {
            if !h.closed || !rig.non_adjacent(a.joint, h.joint) || !bounds[hi].intersects(&owned_bounds) {
                continue;
            }
            let bvh = bvhs[hi].get_or_insert_with(|| Bvh::build(&posed[hi]).expect("bone part has triangles"));
            intrusion_terms(mesh, values, Some(&a.owned_vertices), &posed[hi], bvh, tape, &mut terms);
        }
    }
    sum_or_zero(&terms, tape)
}

/// Pen term for a set of posed hands: all cross pairs (both directions) plus each hand's self term.
pub fn hands_penetration<T: Real>(
    hands: &[(&HandRig<T>, &VarMesh)],
    tape: &mut Tape<T>,
) -> Result<VarId, LossError> {
    let values: Vec<TriMesh<T>> = hands.iter().map(|(_, m)| m.values(tape)).collect();
    let mut cross = Vec::new();
    for i in 0..hands.len() {
        for j in i + 1..hands.len() {
            let (bi, bj) = (Bvh::build(&values[i]).map_err(|source| LossError::RenderOnly { index: i, source })?,
                Bvh::build(&values[j]).map_err(|source| LossError::RenderOnly { index: j, source })?);
            let ij = cross_sum(hands[i].1, &values[i], &values[j], &bj, tape);
            let ji = cross_sum(hands[j].1, &values[j], &values[i], &bi, tape);
            cross.push(tape.add(ij, ji));
        }
    }
    let selfs: Vec<VarId> =
        hands.iter().zip(&values).map(|((rig, m), v)| self_penetration(rig, m, v, tape)).collect();
    let c = sum_or_zero(&cross, tape);
    let s = sum_or_zero(&selfs, tape);
    Ok(tape.add(c, s))
}

/// Value of the full pen term for posed hands, without keeping the tape.
pub fn scene_penetration<T: Real>(hands: &[(&HandRig<T>, &HandParams<T>)]) -> Result<T, LossError> {
    let mut tape = Tape::new();
    let mut meshes = Vec::with_capacity(hands.len());
    for (rig, params) in hands {
        let vars = HandParamVars::new(&mut tape, params);
        let frames = forward_kinematics(rig, &vars, &params.beta, &mut tape)?;
        meshes.push(skin(rig, &frames, &mut tape));
    }
    let pairs: Vec<(&HandRig<T>, &VarMesh)> = hands.iter().map(|(r, _)| *r).zip(&meshes).collect();
    let pen = hands_penetration(&pairs, &mut tape)?;
    Ok(tape.value(pen))
}

/// Brute-force value of the cross term: sum of squared depths in both directions.
pub fn penetration_value<T: Real>(a: &TriMesh<T>, b: &TriMesh<T>) -> Result<T, LossError> {
    let (ba, bb) = (watertight(0, a)?, watertight(1, b)?);
    let sq = |pens: Vec<crate::geometry::Penetration<T>>| pens.iter().fold(T::zero(), |s, p| s + p.depth * p.depth);
    Ok(sq(detect_penetrations(a, b, &bb)) + sq(detect_penetrations(b, a, &ba)))
}

/// `sum relu(theta - hi)^2 + relu(lo - theta)^2` over every channel.
pub fn limit_penalty<T: Real>(rig: &HandRig<T>, vars: &HandParamVars, tape: &mut Tape<T>) -> VarId {
    let mut terms = Vec::with_capacity(ARTICULATED_JOINTS * 6);
    for j in 0..ARTICULATED_JOINTS {
        for a in 0..3 {
            let (lo, hi) = rig.limits.interval(j, a);
            let x = vars.theta[j][a];
            let over = tape.add_const(x, -hi);
            let over = tape.relu(over);
            let under = tape.linear(&[(x, -T::one())], lo);
            let under = tape.relu(under);
            terms.push(tape.dot(&[over, under], &[over, under]));
        }
    }
    tape.sum(&terms)
}

/// Everything recorded by one objective evaluation.
pub struct LossEval<T> {
    pub total: VarId,
    pub report: LossReport,
    pub vars: Vec<HandParamVars>,
    pub meshes: Vec<VarMesh>,
    pub render: GrayImage<T>,
}

/// Objective over a blend of targets: `sum_k c_k * image(target_k)` plus the same pen and limit terms.
pub struct Objective<'a, T> {
    pub targets: Vec<(&'a GrayImage<T>, T)>,
    pub camera: &'a Camera,
    pub settings: &'a RenderSettings,
    pub weights: &'a LossWeights,
    pub norm: ImageNorm,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn single(
        target: &'a GrayImage<T>,
        camera: &'a Camera,
        settings: &'a RenderSettings,
        weights: &'a LossWeights,
        norm: ImageNorm,
    ) -> Self {
        Self { targets: vec![(target, T::one())], camera, settings, weights, norm }
    }

    /// FK, skinning, soft render, image term and pen term on one tape.
    pub fn evaluate(&self, hands: &[(&HandRig<T>, &HandParams<T>)], tape: &mut Tape<T>) -> Result<LossEval<T>, LossError> {
        self.weights.validate()?;
        let mut vars = Vec::with_capacity(hands.len());
        let mut meshes = Vec::with_capacity(hands.len());
        for (rig, params) in hands {
            let v = HandParamVars::new(tape, params);
            let frames = forward_kinematics(rig, &v, &params.beta, tape)?;
            meshes.push(skin(rig, &frames, tape));
            vars.push(v);
        }
        let mesh_refs: Vec<&VarMesh> = meshes.iter().collect();
        let render = render_silhouette_soft(&mesh_refs, self.camera, self.settings, tape)?;
        let mut image_terms = Vec::with_capacity(self.targets.len());
        for (target, c) in &self.targets {
            render.image.same_size(target)?;
            image_terms.push((image_l2(target, &render.pixels, self.norm, tape)?, *c));
        }
        let image = if image_terms.len() == 1 && image_terms[0].1 == T::one() {
            image_terms[0].0
        } else {
            tape.linear(&image_terms, T::zero())
        };
        let pairs: Vec<(&HandRig<T>, &VarMesh)> = hands.iter().map(|(r, _)| *r).zip(&meshes).collect();
        let pen = hands_penetration(&pairs, tape)?;
        let w = self.weights;
        let mut terms = vec![(image, T::lit(w.w_image)), (pen, T::lit(w.w_pen))];
        let mut limit_value = T::zero();
        if w.w_limit > 0.0 {
            let parts: Vec<VarId> = hands.iter().zip(&vars).map(|((rig, _), v)| limit_penalty(rig, v, tape)).collect();
            let limit = tape.sum(&parts);
            limit_value = tape.value(limit);
            terms.push((limit, T::lit(w.w_limit)));
        }
        let total = tape.linear(&terms, T::zero());
        let report = LossReport {
            iteration: 0,
            total: tape.value(total).as_f64(),
            image_term: tape.value(image).as_f64(),
            pen_term: tape.value(pen).as_f64(),
            limit_term: limit_value.as_f64(),
        };
        Ok(LossEval { total, report, vars, meshes, render: render.image })
    }
}

/// Single-target objective, see [`Objective::evaluate`].
pub fn total_loss<T: Real>(
    target: &GrayImage<T>,
    hands: &[(&HandRig<T>, &HandParams<T>)],
    camera: &Camera,
    settings: &RenderSettings,
    weights: &LossWeights,
    norm: ImageNorm,
    tape: &mut Tape<T>,
) -> Result<LossEval<T>, LossError> {
    Objective::single(target, camera, settings, weights, norm).evaluate(hands, tape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn leaves(tape: &mut Tape<f64>, px: &[f64]) -> Vec<VarId> {
        px.iter().map(|&v| tape.leaf(v)).collect()
    }

    #[test]
    fn image_l2_examples() {
        let mut tape = Tape::new();
        let target = GrayImage::zeros(2, 2);
        let ones = leaves(&mut tape, &[1.0; 4]);
        let l = image_l2(&target, &ones, ImageNorm::Root, &mut tape).unwrap();
        assert_eq!(tape.value(l), 2.0);
        let same = leaves(&mut tape, &[0.0; 4]);
        let z = image_l2(&target, &same, ImageNorm::Root, &mut tape).unwrap();
        assert_eq!(tape.value(z), 0.0);
        let g = tape.backward(z);
        assert!(same.iter().all(|&v| g.wrt(v) == 0.0));
    }

    #[test]
    fn image_l2_gradient() {
        let target = GrayImage::new(1, 3, vec![0.2, 0.9, 0.5]).unwrap();
        let r = [0.7, 0.1, 0.55];
        for norm in [ImageNorm::Root, ImageNorm::MeanSquared, ImageNorm::SumSquared] {
            let mut tape = Tape::new();
            let px = leaves(&mut tape, &r);
            let l = image_l2(&target, &px, norm, &mut tape).unwrap();
            let g = tape.backward(l);
            let f = |k: usize, h: f64| {
                let mut q = r;
                q[k] += h;
                image_distance(&target, &GrayImage::new(1, 3, q.to_vec()).unwrap(), norm).unwrap()
            };
            for k in 0..3 {
                let fd = (f(k, 1e-6) - f(k, -1e-6)) / 2e-6;
                assert!((g.wrt(px[k]) - fd).abs() < 1e-8, "{norm:?} {k}");
            }
            if norm == ImageNorm::Root {
                let l2 = tape.value(l);
                assert!((g.wrt(px[0]) - (0.7 - 0.2) / l2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let px = leaves(&mut tape, &[0.0; 3]);
        assert!(matches!(
            image_l2(&GrayImage::zeros(2, 2), &px, ImageNorm::Root, &mut tape),
            Err(LossError::PixelCount { expected: 4, found: 3 })
        ));
    }

    fn var_mesh(tape: &mut Tape<f64>, m: &TriMesh<f64>) -> VarMesh {
        VarMesh {
            vertices: m.vertices.iter().map(|v| v.to_array().map(|x| tape.leaf(x))).collect(),
            triangles: m.triangles.clone(),
        }
    }

    #[test]
    fn pen_disjoint_zero_and_symmetric() {
        let a = shapes::icosphere::<f64>(1.0, 2);
        let far = a.translated(Vec3::new(3.0, 0.0, 0.0));
        let near = a.translated(Vec3::new(1.5, 0.1, 0.0));
        let mut tape = Tape::new();
        let (va, vf, vn) = (var_mesh(&mut tape, &a), var_mesh(&mut tape, &far), var_mesh(&mut tape, &near));
        let z = penetration_loss(&va, &vf, &mut tape).unwrap();
        assert_eq!(tape.value(z), 0.0);
        let ab = penetration_loss(&va, &vn, &mut tape).unwrap();
        let ba = penetration_loss(&vn, &va, &mut tape).unwrap();
        assert!(tape.value(ab) > 0.0);
        assert_eq!(tape.value(ab), tape.value(ba));
        assert!((tape.value(ab) - penetration_value(&a, &near).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pen_gradient_moves_intruder_out() {
        let a = shapes::icosphere::<f64>(1.0, 2);
        let b = a.translated(Vec3::new(1.5, 0.0, 0.0));
        let mut tape = Tape::new();
        let (va, vb) = (var_mesh(&mut tape, &a), var_mesh(&mut tape, &b));
        let l = penetration_loss(&va, &vb, &mut tape).unwrap();
        let g = tape.backward(l);
        // Descent moves sphere a toward -x, away from b.
        let gx: f64 = va.vertices.iter().map(|v| g.wrt(v[0])).sum();
        assert!(gx > 0.0);
    }

    #[test]
    fn open_mesh_is_render_only() {
        let mut m = shapes::unit_cube::<f64>();
        m.triangles.pop();
        let mut tape = Tape::new();
        let (va, vb) = (var_mesh(&mut tape, &shapes::unit_cube()), var_mesh(&mut tape, &m));
        assert!(matches!(penetration_loss(&va, &vb, &mut tape), Err(LossError::RenderOnly { index: 1, .. })));
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights { w_pen: -1.0, ..LossWeights::default() };
        assert!(matches!(w.validate(), Err(LossError::Weight { name: "w_pen", .. })));
    }
}
