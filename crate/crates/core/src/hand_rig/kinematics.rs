use crate::autodiff::{AutodiffError, Tape, VarId};
use crate::geometry::TriMesh;
use crate::math::Vec3;
use crate::scalar::Real;

use super::{HandParams, HandRig, ARTICULATED_JOINTS, POSE_DIM, SHAPE_PARAMS};

/// Tape leaves for the optimized parameters of one hand.
#[derive(Clone, Debug)]
pub struct HandParamVars {
    pub theta: [[VarId; 3]; ARTICULATED_JOINTS],
    pub rotation: [VarId; 4],
    pub translation: [VarId; 3],
}

impl HandParamVars {
    pub fn new<T: Real>(tape: &mut Tape<T>, params: &HandParams<T>) -> Self {
        let theta = params.theta.map(|j| j.map(|a| tape.leaf(a)));
        let rotation = params.rotation.to_array().map(|q| tape.leaf(q));
        let translation = params.translation.to_array().map(|t| tape.leaf(t));
        Self { theta, rotation, translation }
    }

    /// Same order as [`HandParams::to_vec`].
    pub fn flat(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = Vec::with_capacity(POSE_DIM);
        v.extend(self.theta.iter().flatten());
        v.extend(self.rotation);
        v.extend(self.translation);
        v
    }
}

/// Differentiable affine frame: row-major linear part and translation.
#[derive(Clone, Copy, Debug)]
pub struct VarFrame {
    pub linear: [VarId; 9],
    pub translation: [VarId; 3],
}

impl VarFrame {
    fn row(&self, r: usize) -> [VarId; 3] {
        [self.linear[r * 3], self.linear[r * 3 + 1], self.linear[r * 3 + 2]]
    }

    fn col(m: &[VarId; 9], c: usize) -> [VarId; 3] {
        [m[c], m[3 + c], m[6 + c]]
    }
}

/// Mesh whose vertex coordinates live on a tape.
#[derive(Clone, Debug)]
pub struct VarMesh {
    pub vertices: Vec<[VarId; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl VarMesh {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> TriMesh<T> {
        TriMesh::from_parts(
            self.vertices.iter().map(|v| Vec3::from_array(v.map(|x| tape.value(x)))).collect(),
            self.triangles.clone(),
        )
    }
}

fn euler_xyz<T: Real>(tape: &mut Tape<T>, angles: [VarId; 3]) -> [VarId; 9] {
    let [a, b, c] = angles;
    let (sa, ca) = (tape.sin(a), tape.cos(a));
    let (sb, cb) = (tape.sin(b), tape.cos(b));
    let (sc, cc) = (tape.sin(c), tape.cos(c));
    let m1 = -T::one();
    let cbcc = tape.mul(cb, cc);
    let cbsc = tape.mul(cb, sc);
    let sasb = tape.mul(sa, sb);
    let casb = tape.mul(ca, sb);
    let e01 = tape.mul_const(cbsc, m1);
    let e10 = tape.dot(&[sasb, ca], &[cc, sc]);
    let nsasb = tape.mul_const(sasb, m1);
    let e11 = tape.dot(&[ca, nsasb], &[cc, sc]);
    let sacb = tape.mul(sa, cb);
    let e12 = tape.mul_const(sacb, m1);
    let ncasb = tape.mul_const(casb, m1);
    let e20 = tape.dot(&[sa, ncasb], &[sc, cc]);
    let e21 = tape.dot(&[casb, sa], &[sc, cc]);
    let e22 = tape.mul(ca, cb);
    [cbcc, e01, sb, e10, e11, e12, e20, e21, e22]
}

fn quaternion_matrix<T: Real>(tape: &mut Tape<T>, q: [VarId; 4]) -> Result<[VarId; 9], AutodiffError> {
    let n2 = tape.dot(&q, &q);
    let n = tape.sqrt(n2)?;
    let mut u = [q[0]; 4];
    for (k, &c) in q.iter().enumerate() {
        u[k] = tape.div(c, n)?;
    }
    let [w, x, y, z] = u;
    let (two, one) = (T::lit(2.0), T::one());
    let sq = |tape: &mut Tape<T>, a: VarId, b: VarId| -> VarId {
        let d = tape.dot(&[a, b], &[a, b]);
        tape.linear(&[(d, -two)], one)
    };
    let m00 = sq(tape, y, z);
    let m11 = sq(tape, x, z);
    let m22 = sq(tape, x, y);
    let pair = |tape: &mut Tape<T>, a: VarId, b: VarId, c: VarId, d: VarId, sign: T| -> VarId {
        let p = tape.mul(a, b);
        let r = tape.mul(c, d);
        tape.linear(&[(p, two), (r, two * sign)], T::zero())
    };
    let m01 = pair(tape, x, y, w, z, -one);
    let m02 = pair(tape, x, z, w, y, one);
    let m10 = pair(tape, x, y, w, z, one);
    let m12 = pair(tape, y, z, w, x, -one);
    let m20 = pair(tape, x, z, w, y, -one);
    let m21 = pair(tape, y, z, w, x, one);
    Ok([m00, m01, m02, m10, m11, m12, m20, m21, m22])
}

fn finger_scale<T: Real>(joint: usize, beta: &[T; SHAPE_PARAMS]) -> Option<T> {
    (joint >= 1 && (joint - 1).is_multiple_of(3)).then(|| beta[1 + (joint - 1) / 3])
}

/// World frame of every joint.
///
/// The wrist frame is `translate(t) * rotate(Q) * scale(beta[0])`; each child is
/// `parent * translate(offset) * Rx * Ry * Rz`, with the finger length scale
/// applied at the first joint of each finger.
pub fn forward_kinematics<T: Real>(
    rig: &HandRig<T>,
    vars: &HandParamVars,
    beta: &[T; SHAPE_PARAMS],
    tape: &mut Tape<T>,
) -> Result<Vec<VarFrame>, AutodiffError> {
    let mut frames: Vec<VarFrame> = Vec::with_capacity(rig.joint_count());
    let mut root = quaternion_matrix(tape, vars.rotation)?;
    if beta[0] != T::one() {
        root = root.map(|e| tape.mul_const(e, beta[0]));
    }
    frames.push(VarFrame { linear: root, translation: vars.translation });
    for j in 1..rig.joint_count() {
        let parent = frames[rig.joints[j].parent.expect("validated parent")];
        let o = rig.joints[j].offset;
        let translation = [0, 1, 2].map(|r| {
            let row = parent.row(r);
            tape.linear(
                &[(parent.translation[r], T::one()), (row[0], o.x), (row[1], o.y), (row[2], o.z)],
                T::zero(),
            )
        });
        let local = euler_xyz(tape, vars.theta[j - 1]);
        let mut linear = [parent.linear[0]; 9];
        for r in 0..3 {
            let row = parent.row(r);
            for c in 0..3 {
                linear[r * 3 + c] = tape.dot(&row, &VarFrame::col(&local, c));
            }
        }
        if let Some(s) = finger_scale(j, beta) {
            if s != T::one() {
                linear = linear.map(|e| tape.mul_const(e, s));
            }
        }
        frames.push(VarFrame { linear, translation });
    }
    Ok(frames)
}

/// Linear blend skinning: `v' = sum_k w_k * (M_k * local_k + t_k)`, one tape node per coordinate.
pub fn skin<T: Real>(rig: &HandRig<T>, frames: &[VarFrame], tape: &mut Tape<T>) -> VarMesh {
    let mut vertices = Vec::with_capacity(rig.rest_mesh.vertices.len());
    let mut terms: Vec<(VarId, T)> = Vec::with_capacity(16);
    for v in 0..rig.rest_mesh.vertices.len() {
        let inf = rig.influences(v);
        let coord = [0usize, 1, 2].map(|r| {
            terms.clear();
            for i in inf {
                let f = &frames[i.joint as usize];
                let row = f.row(r);
                terms.push((row[0], i.weight * i.local.x));
                terms.push((row[1], i.weight * i.local.y));
                terms.push((row[2], i.weight * i.local.z));
                terms.push((f.translation[r], i.weight));
            }
            tape.linear(&terms, T::zero())
        });
        vertices.push(coord);
    }
    VarMesh { vertices, triangles: rig.rest_mesh.triangles.clone() }
}

/// Posed mesh values without keeping the tape.
pub fn pose_mesh<T: Real>(rig: &HandRig<T>, params: &HandParams<T>) -> Result<TriMesh<T>, AutodiffError> {
    let mut tape = Tape::with_capacity(4096);
    let vars = HandParamVars::new(&mut tape, params);
    let frames = forward_kinematics(rig, &vars, &params.beta, &mut tape)?;
    Ok(skin(rig, &frames, &mut tape).values(&tape))
}
