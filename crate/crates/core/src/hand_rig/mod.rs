//! The parametric hand: kinematic tree, linear blend skinning, joint limits
//! and the rig / params file formats.
//!
//! A rig has a wrist root (joint 0) and five fingers of three joints each, in
//! the order index, middle, little, ring, thumb. Joint `j` is placed at its
//! parent's frame plus a rest offset and rotated by intrinsic X-Y-Z Euler
//! angles. The wrist carries the global rotation, translation and scale.

mod kinematics;
mod limits;
mod params;
mod procedural;
mod rig_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kinematics::{forward_kinematics, pose_mesh, skin, HandParamVars, VarFrame, VarMesh};
pub use limits::{default_limits, joint_of, JointLimits, FINGER_NAMES};
pub use params::{clamp_pose, params_to_string, parse_params, through_params_file, HandParams, POSE_DIM};
pub use procedural::{make_procedural_hand, make_procedural_hand_scaled, palm_to_camera, PROCEDURAL_WIDTH};
pub use rig_file::{load_rig, parse_rig, rig_to_string, save_rig};

use crate::geometry::{GeometryError, TriMesh};
use crate::math::Vec3;
use crate::scalar::Real;

/// Articulated joints per hand, excluding the wrist root.
pub const ARTICULATED_JOINTS: usize = 15;
/// Global scale plus one length scale per finger.
pub const SHAPE_PARAMS: usize = 6;
pub const MAX_INFLUENCES: usize = 4;
const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn name(self) -> &'static str {
        match self {
            Handedness::Left => "left",
            Handedness::Right => "right",
        }
    }
}

#[derive(Debug, Error)]
pub enum RigError {
    #[error("expected {ARTICULATED_JOINTS} articulated joints, found {found}")]
    JointCount { found: usize },
    #[error("joint {joint}: parent must precede the joint (root must be joint 0)")]
    ParentOrder { joint: usize },
    #[error("vertex {vertex}: skin weights sum to {sum}, expected 1")]
    WeightSum { vertex: usize, sum: f64 },
    #[error("vertex {vertex}: {message}")]
    BadInfluence { vertex: usize, message: String },
    #[error("{vertices} vertices but {weights} weight lists")]
    WeightCount { vertices: usize, weights: usize },
    #[error("rest mesh: {0}")]
    Mesh(#[from] GeometryError),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint<T> {
    /// `None` only for the wrist root.
    pub parent: Option<usize>,
    /// Rest offset from the parent joint in the parent frame, meters.
    pub offset: Vec3<T>,
}

/// One skinning influence, with the rest vertex expressed in the joint frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Influence<T> {
    pub joint: u32,
    pub weight: T,
    pub local: Vec3<T>,
}

/// Triangles whose vertices are driven by one joint, used for self-penetration tests.
#[derive(Clone, Debug, PartialEq)]
pub struct BonePart {
    pub joint: usize,
    /// Triangles in local indexing over `vertex_ids`.
    pub triangles: Vec<[u32; 3]>,
    /// Rest-mesh vertex index of each local vertex.
    pub vertex_ids: Vec<u32>,
    /// Vertices whose dominant influence is this joint.
    pub owned_vertices: Vec<u32>,
    /// Whether the part can host inside queries.
    pub closed: bool,
}

#[derive(Clone, Debug)]
pub struct HandRig<T> {
    pub handedness: Handedness,
    pub joints: Vec<Joint<T>>,
    pub rest_mesh: TriMesh<T>,
    pub skin_weights: Vec<Vec<(u32, T)>>,
    pub limits: JointLimits<T>,
    rest_positions: Vec<Vec3<T>>,
    influence_start: Vec<u32>,
    influences: Vec<Influence<T>>,
    bones: Vec<BonePart>,
}

impl<T: Real> HandRig<T> {
    /// Validates the rig invariants and precomputes joint-local rest vertices.
    pub fn new(
        handedness: Handedness,
        joints: Vec<Joint<T>>,
        rest_mesh: TriMesh<T>,
        skin_weights: Vec<Vec<(u32, T)>>,
        limits: JointLimits<T>,
    ) -> Result<Self, RigError> {
        if joints.len() != ARTICULATED_JOINTS + 1 {
            return Err(RigError::JointCount { found: joints.len().saturating_sub(1) });
        }
        for (j, joint) in joints.iter().enumerate() {
            let ok = match joint.parent {
                None => j == 0,
                Some(p) => j > 0 && p < j,
            };
            if !ok {
                return Err(RigError::ParentOrder { joint: j });
            }
        }
        rest_mesh.validate()?;
        rest_mesh.check_watertight()?;
        if skin_weights.len() != rest_mesh.vertices.len() {
            return Err(RigError::WeightCount {
                vertices: rest_mesh.vertices.len(),
                weights: skin_weights.len(),
            });
        }

        let mut rest_positions: Vec<Vec3<T>> = Vec::with_capacity(joints.len());
        for joint in &joints {
            let base = joint.parent.map_or_else(Vec3::zero, |p| rest_positions[p]);
            rest_positions.push(base + joint.offset);
        }

        let mut influence_start = Vec::with_capacity(skin_weights.len() + 1);
        let mut influences = Vec::new();
        let mut dominant = Vec::with_capacity(skin_weights.len());
        for (v, ws) in skin_weights.iter().enumerate() {
            if ws.is_empty() || ws.len() > MAX_INFLUENCES {
                return Err(RigError::BadInfluence {
                    vertex: v,
                    message: format!("needs 1..={MAX_INFLUENCES} influences, found {}", ws.len()),
                });
            }
            let mut sum = T::zero();
            let mut best = (0u32, -T::one());
            influence_start.push(influences.len() as u32);
            for &(j, w) in ws {
                if j as usize >= joints.len() {
                    return Err(RigError::BadInfluence { vertex: v, message: format!("joint {j} does not exist") });
                }
                if !(w >= T::zero()) {
                    return Err(RigError::BadInfluence { vertex: v, message: format!("negative weight {w}") });
                }
                sum += w;
                if w > best.1 || (w == best.1 && j < best.0) {
                    best = (j, w);
                }
                influences.push(Influence {
                    joint: j,
                    weight: w,
                    local: rest_mesh.vertices[v] - rest_positions[j as usize],
                });
            }
            if (sum.as_f64() - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(RigError::WeightSum { vertex: v, sum: sum.as_f64() });
            }
            dominant.push(best.0 as usize);
        }
        influence_start.push(influences.len() as u32);

        let bones = segment_bones(&rest_mesh, &dominant, joints.len());
        Ok(Self {
            handedness,
            joints,
            rest_mesh,
            skin_weights,
            limits,
            rest_positions,
            influence_start,
            influences,
            bones,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Joint positions in the rest pose (unit shape, identity global transform).
    pub fn rest_positions(&self) -> &[Vec3<T>] {
        &self.rest_positions
    }

    pub fn influences(&self, vertex: usize) -> &[Influence<T>] {
        let (s, e) = (self.influence_start[vertex] as usize, self.influence_start[vertex + 1] as usize);
        &self.influences[s..e]
    }

    pub fn bones(&self) -> &[BonePart] {
        &self.bones
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    /// True when neither joint is the other's parent.
    pub fn non_adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.parent(a) != Some(b) && self.parent(b) != Some(a)
    }
}

fn segment_bones<T: Real>(mesh: &TriMesh<T>, dominant: &[usize], joints: usize) -> Vec<BonePart> {
    let mut tri_lists: Vec<Vec<usize>> = vec![Vec::new(); joints];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|v| dominant[v as usize]);
        let bone = if b == c { b } else { a };
        tri_lists[bone].push(t);
    }
    let mut owned: Vec<Vec<u32>> = vec![Vec::new(); joints];
    for (v, &d) in dominant.iter().enumerate() {
        owned[d].push(v as u32);
    }
    tri_lists
        .into_iter()
        .zip(owned)
        .enumerate()
        .filter(|(_, (tris, _))| !tris.is_empty())
        .map(|(joint, (tris, owned_vertices))| {
            let (sub, vertex_ids) = mesh.submesh(&tris);
            BonePart { joint, closed: sub.is_watertight(), triangles: sub.triangles, vertex_ids, owned_vertices }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn cube_rig(weights: Vec<Vec<(u32, f64)>>, joints: usize) -> Result<HandRig<f64>, RigError> {
        let mesh = shapes::unit_cube::<f64>();
        let js = (0..joints)
            .map(|j| Joint { parent: j.checked_sub(1), offset: Vec3::new(0.01, 0.0, 0.0) })
            .collect();
        HandRig::new(Handedness::Left, js, mesh, weights, default_limits(Handedness::Left))
    }

    #[test]
    fn rejects_weight_sum_and_joint_count() {
        let mut w = vec![vec![(0u32, 1.0)]; 8];
        w[5] = vec![(0, 0.5), (1, 0.4)];
        match cube_rig(w, 16) {
            Err(RigError::WeightSum { vertex: 5, sum }) => assert!((sum - 0.9).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let e = cube_rig(vec![vec![(0u32, 1.0)]; 8], 15).unwrap_err();
        assert_eq!(e.to_string(), "expected 15 articulated joints, found 14");
    }

    #[test]
    fn accepts_valid_rig() {
        let rig = cube_rig(vec![vec![(0u32, 0.25), (3, 0.75)]; 8], 16).unwrap();
        assert_eq!(rig.bones().len(), 1);
        assert_eq!(rig.bones()[0].joint, 3);
        assert!(rig.bones()[0].closed);
        assert!(rig.non_adjacent(1, 3));
        assert!(!rig.non_adjacent(2, 3));
    }
}
