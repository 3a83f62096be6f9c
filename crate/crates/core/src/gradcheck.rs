//! Finite-difference verification of every differentiable stage.
//!
//! Four fixed stages run at one seed: elementary tape ops, forward kinematics with
//! skinning, the soft rasterizer, and the full objective. Each compares reverse-mode
//! gradients against central differences and keeps the worst relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, VarId};
use crate::hand_rig::{
    forward_kinematics, make_procedural_hand, pose_mesh, skin, HandParamVars, HandParams, HandRig, Handedness,
    POSE_DIM,
};
use crate::losses::{scene_penetration, ImageNorm, LossWeights, Objective};
use crate::math::{Quat, Vec3};
use crate::optimizer::random_init;
use crate::renderer::{render_silhouette_hard, render_silhouette_soft, Camera, RenderSettings, SOFT_OP_NAME};

pub const STAGE_NAMES: [&str; 4] = ["autodiff", "fk_skin", "rasterizer", "total_loss"];

/// Denominator floor of the relative error, so exact zeros compare as absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Roundoff allowance of a central difference, in units of `eps * |f| / h`.
const ROUNDOFF_ULPS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageResult {
    pub name: &'static str,
    pub worst_rel_error: f64,
    pub threshold: f64,
    /// Parameter at which the worst error occurred.
    pub worst_param: String,
    pub checks: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub stages: Vec<StageResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StageResult> {
        self.stages.iter().filter(|s| !s.passed)
    }
}

/// Symmetric relative error with an absolute floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_FLOOR)
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor that lets a roundoff-sized difference pass at `threshold`.
fn roundoff_floor(value: f64, h: f64, threshold: f64) -> f64 {
    (ROUNDOFF_ULPS * f64::EPSILON * value.abs() / (h * threshold)).max(REL_FLOOR)
}

/// Central differences of `f` at `x`, with step `h(x_i)`.
pub fn central_differences(x: &[f64], h: impl Fn(f64) -> f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h(x[i]);
            xs[i] = x[i] + step;
            let up = f(&xs);
            xs[i] = x[i] - step;
            let down = f(&xs);
            xs[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

struct Worst {
    error: f64,
    param: String,
    checks: usize,
}

impl Worst {
    fn new() -> Self {
        Self { error: 0.0, param: "none".into(), checks: 0 }
    }

    fn update(&mut self, analytic: &[f64], numeric: &[f64], floor: f64, label: impl Fn(usize) -> String) {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let e = relative_error_floored(a, n, floor);
            self.checks += 1;
            if !(e <= self.error) {
                self.error = e;
                self.param = format!("{} (analytic {a:.6e}, numeric {n:.6e})", label(i));
            }
        }
    }

    fn finish(self, name: &'static str, threshold: f64) -> StageResult {
        StageResult {
            name,
            worst_rel_error: self.error,
            threshold,
            worst_param: self.param,
            checks: self.checks,
            passed: self.error < threshold,
        }
    }
}

/// One recorded op of a random expression DAG.
#[derive(Clone, Copy)]
struct DagOp {
    kind: u8,
    a: usize,
    b: usize,
}

const DAG_KINDS: u8 = 14;

fn build_dag(ops: &[DagOp], x: &[f64], tape: &mut Tape<f64>) -> (Vec<VarId>, VarId) {
    let leaves: Vec<VarId> = x.iter().map(|&v| tape.leaf(v)).collect();
    let mut nodes = leaves.clone();
    for op in ops {
        let (a, b) = (nodes[op.a], nodes[op.b]);
        let v = match op.kind {
            0 => tape.add(a, b),
            1 => tape.sub(a, b),
            2 => tape.mul(a, b),
            3 => {
                // a / (b^2 + 1)
                let bb = tape.mul(b, b);
                let d = tape.add_const(bb, 1.0);
                tape.div(a, d).expect("denominator at least 1")
            }
            4 => tape.neg(a),
            5 => tape.sin(a),
            6 => tape.cos(a),
            7 => {
                let s = tape.sin(a);
                tape.exp(s)
            }
            8 => {
                let aa = tape.mul(a, a);
                let r = tape.add_const(aa, 0.5);
                tape.sqrt(r).expect("radicand at least 0.5")
            }
            9 => tape.sigmoid(a),
            10 => tape.min(a, b),
            11 => tape.max(a, b),
            12 => tape.relu(a),
            _ => {
                let s = tape.sin(a);
                tape.powi(s, 3)
            }
        };
        nodes.push(v);
    }
    let tail: Vec<VarId> = nodes[nodes.len().saturating_sub(3)..].to_vec();
    let root = tape.sum(&tail);
    (leaves, root)
}

fn stage_autodiff(rng: &mut ChaCha8Rng) -> StageResult {
    let mut worst = Worst::new();
    for trial in 0..40 {
        let inputs = rng.gen_range(1..=6);
        let x: Vec<f64> = (0..inputs).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let len = rng.gen_range(10..=60);
        let ops: Vec<DagOp> = (0..len)
            .map(|k| {
                let avail = inputs + k;
                DagOp { kind: rng.gen_range(0..DAG_KINDS), a: rng.gen_range(0..avail), b: rng.gen_range(0..avail) }
            })
            .collect();
        let mut tape = Tape::new();
        let (leaves, root) = build_dag(&ops, &x, &mut tape);
        if !tape.value(root).is_finite() || tape.value(root).abs() > 1e8 {
            continue;
        }
        let g = tape.backward(root);
        let analytic: Vec<f64> = leaves.iter().map(|&l| g.wrt(l)).collect();
        let numeric = central_differences(&x, |v| 1e-5 * v.abs().max(1.0), |xs| {
            let mut t = Tape::new();
            let (_, r) = build_dag(&ops, xs, &mut t);
            t.value(r)
        });
        let floor = x.iter().map(|&v| roundoff_floor(tape.value(root), 1e-5 * v.abs().max(1.0), 1e-4)).fold(0.0, f64::max);
        worst.update(&analytic, &numeric, floor, |i| format!("dag {trial} input {i}"));
    }
    worst.finish("autodiff", 1e-4)
}

fn random_pose(rng: &mut ChaCha8Rng, rig: &HandRig<f64>) -> HandParams<f64> {
    let mut p = HandParams::rest();
    for (j, angles) in p.theta.iter_mut().enumerate() {
        for (a, angle) in angles.iter_mut().enumerate() {
            let (lo, hi) = rig.limits.interval(j, a);
            *angle = lo + (hi - lo) * rng.gen::<f64>();
        }
    }
    let q = Quat::new(rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    p.rotation = q.normalized();
    p.translation = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.6..-0.3));
    p
}

fn param_label(hand: usize, i: usize) -> String {
    let what = match i {
        0..45 => format!("theta[{}][{}]", i / 3, i % 3),
        45..49 => format!("rotation[{}]", i - 45),
        _ => format!("translation[{}]", i - 49),
    };
    format!("hand {hand} {what}")
}

fn with_vec(base: &HandParams<f64>, v: &[f64]) -> HandParams<f64> {
    let mut p = base.clone();
    p.set_from_vec(v);
    p
}

fn stage_fk_skin(rng: &mut ChaCha8Rng) -> StageResult {
    let mut worst = Worst::new();
    for (h, handedness) in [Handedness::Left, Handedness::Right].into_iter().enumerate() {
        let rig = make_procedural_hand::<f64>(handedness);
        let pose = random_pose(rng, &rig);
        let weights: Vec<[f64; 3]> =
            (0..rig.rest_mesh.vertices.len()).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let eval = |p: &HandParams<f64>, tape: &mut Tape<f64>| -> (HandParamVars, VarId) {
            let vars = HandParamVars::new(tape, p);
            let frames = forward_kinematics(&rig, &vars, &p.beta, tape).expect("nonzero quaternion");
            let mesh = skin(&rig, &frames, tape);
            let terms: Vec<(VarId, f64)> =
                mesh.vertices.iter().zip(&weights).flat_map(|(v, w)| (0..3).map(move |c| (v[c], w[c]))).collect();
            (vars, tape.linear(&terms, 0.0))
        };
        let mut tape = Tape::new();
        let (vars, root) = eval(&pose, &mut tape);
        let g = tape.backward(root);
        let analytic: Vec<f64> = vars.flat().iter().map(|&v| g.wrt(v)).collect();
        let numeric = central_differences(&pose.to_vec(), |_| 1e-6, |xs| {
            let mut t = Tape::new();
            let (_, r) = eval(&with_vec(&pose, xs), &mut t);
            t.value(r)
        });
        worst.update(&analytic, &numeric, roundoff_floor(tape.value(root), 1e-6, 1e-4), |i| param_label(h, i));
    }
    worst.finish("fk_skin", 1e-4)
}

fn random_triangle_scene(rng: &mut ChaCha8Rng, triangles: usize) -> Vec<f64> {
    let mut coords = Vec::with_capacity(triangles * 9);
    for _ in 0..triangles {
        let depth: f64 = rng.gen_range(0.8..1.5);
        let center = [rng.gen_range(-0.4..0.4) * depth, rng.gen_range(-0.4..0.4) * depth];
        for _ in 0..3 {
            coords.push(center[0] + rng.gen_range(-0.15..0.15) * depth);
            coords.push(center[1] + rng.gen_range(-0.15..0.15) * depth);
            coords.push(-depth + rng.gen_range(-0.05..0.05));
        }
    }
    coords
}

fn stage_rasterizer(rng: &mut ChaCha8Rng, fault: bool) -> StageResult {
    let camera = Camera::with_resolution(64, 64);
    let settings = RenderSettings::default();
    let mut worst = Worst::new();
    for scene in 0..5 {
        let coords = random_triangle_scene(rng, 20);
        let pixel_weights: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |xs: &[f64], tape: &mut Tape<f64>| -> (Vec<VarId>, VarId) {
            let leaves: Vec<VarId> = xs.iter().map(|&v| tape.leaf(v)).collect();
            let mesh = crate::hand_rig::VarMesh {
                vertices: leaves.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
                triangles: (0..xs.len() as u32 / 9).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect(),
            };
            let render = render_silhouette_soft(&[&mesh], &camera, &settings, tape).expect("valid scene");
            let terms: Vec<(VarId, f64)> = render.pixels.iter().copied().zip(pixel_weights.iter().copied()).collect();
            (leaves, tape.linear(&terms, 0.0))
        };
        let mut tape = Tape::new();
        let (leaves, root) = eval(&coords, &mut tape);
        if fault {
            tape.corrupt_fused_adjoint(SOFT_OP_NAME, 2.0);
        }
        let g = tape.backward(root);
        let analytic: Vec<f64> = leaves.iter().map(|&v| g.wrt(v)).collect();
        let numeric = central_differences(&coords, |_| 1e-7, |xs| {
            let mut t = Tape::new();
            let (_, r) = eval(xs, &mut t);
            t.value(r)
        });
        let floor = roundoff_floor(tape.value(root), 1e-7, 1e-3);
        worst.update(&analytic, &numeric, floor, |i| format!("scene {scene} vertex {} coord {}", i / 3, i % 3));
    }
    worst.finish("rasterizer", 1e-3)
}

fn stage_total_loss(seed: u64, fault: bool) -> StageResult {
    let camera = Camera::with_resolution(64, 64);
    let settings = RenderSettings::default();
    let weights = LossWeights::default();
    let rigs = [make_procedural_hand::<f64>(Handedness::Left), make_procedural_hand::<f64>(Handedness::Right)];
    let rig_refs = [&rigs[0], &rigs[1]];
    // A contact-free scene: the pen term is differentiated with its host held fixed,
    // which only agrees with finite differences where nothing penetrates.
    let mut k = 0;
    let pose = loop {
        let p = random_init(seed.wrapping_mul(31).wrapping_add(k), &rig_refs, &camera);
        let pairs: Vec<_> = rig_refs.iter().copied().zip(&p).collect();
        if scene_penetration(&pairs).map(|v| v == 0.0).unwrap_or(false) || k == 16 {
            break p;
        }
        k += 1;
    };
    let other = random_init(seed.wrapping_mul(31).wrapping_add(1000), &rig_refs, &camera);
    let meshes: Vec<_> = rigs.iter().zip(&other).map(|(r, p)| pose_mesh(r, p).expect("unit rotation")).collect();
    let target = render_silhouette_hard(&[&meshes[0], &meshes[1]], &camera).expect("two meshes");
    let objective = Objective::single(&target, &camera, &settings, &weights, ImageNorm::Root);

    let flat: Vec<f64> = pose.iter().flat_map(|p| p.to_vec()).collect();
    let unflat = |xs: &[f64]| -> Vec<HandParams<f64>> {
        pose.iter().enumerate().map(|(h, p)| with_vec(p, &xs[h * POSE_DIM..(h + 1) * POSE_DIM])).collect()
    };
    let value = |xs: &[f64]| {
        let ps = unflat(xs);
        let hands: Vec<_> = rig_refs.iter().copied().zip(&ps).collect();
        let mut t = Tape::new();
        let eval = objective.evaluate(&hands, &mut t).expect("valid scene");
        t.value(eval.total)
    };
    let hands: Vec<_> = rig_refs.iter().copied().zip(&pose).collect();
    let mut tape = Tape::new();
    let eval = objective.evaluate(&hands, &mut tape).expect("valid scene");
    if fault {
        tape.corrupt_fused_adjoint(SOFT_OP_NAME, 2.0);
    }
    let g = tape.backward(eval.total);
    let analytic: Vec<f64> = eval.vars.iter().flat_map(|v| v.flat()).map(|v| g.wrt(v)).collect();
    let numeric = central_differences(&flat, |_| 1e-7, value);
    let mut worst = Worst::new();
    worst.update(&analytic, &numeric, roundoff_floor(tape.value(eval.total), 1e-7, 1e-3), |i| param_label(i / POSE_DIM, i % POSE_DIM));
    worst.finish("total_loss", 1e-3)
}

/// Runs all four stages. `inject_fault` scales the rasterizer adjoint by 2, which
/// the rasterizer and total-loss stages must catch.
pub fn run_gradcheck(seed: u64, inject_fault: bool) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = vec![
        stage_autodiff(&mut rng),
        stage_fk_skin(&mut rng),
        stage_rasterizer(&mut rng, inject_fault),
        stage_total_loss(seed, inject_fault),
    ];
    GradcheckReport { seed, stages }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn central_differences_of_cubic() {
        let d = central_differences(&[2.0], |_| 1e-4, |x| x[0].powi(3));
        assert!((d[0] - 12.0).abs() < 1e-6);
    }
}
