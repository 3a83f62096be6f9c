//! Rig files are TOML documents:
//!
//! ```toml
//! format = "handshadow-rig/1"
//! handedness = "left"
//! mesh_obj = """v 0 0 0 ..."""   # or: mesh_path = "hand.obj" (relative to the rig file)
//! limits_deg = [[0.0, 25.0, 75.0], ...]   # 15 rows of (x, y, z) bounds
//! weights = [[[0, 1.0]], [[3, 0.25], [4, 0.75]], ...]   # per vertex (joint, weight)
//!
//! [[joints]]
//! parent = -1
//! offset = [0.0, 0.0, 0.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{parse_obj, write_obj_string, GeometryError};
use crate::math::Vec3;
use crate::scalar::Real;

use super::{HandRig, Handedness, Joint, JointLimits, RigError, ARTICULATED_JOINTS};

const FORMAT: &str = "handshadow-rig/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    format: String,
    handedness: Handedness,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh_obj: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh_path: Option<String>,
    limits_deg: Vec<[f64; 3]>,
    weights: Vec<Vec<(u32, f64)>>,
    joints: Vec<JointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    parent: i64,
    offset: [f64; 3],
}

/// Serializes a rig with its rest mesh embedded as OBJ text.
pub fn rig_to_string<T: Real>(rig: &HandRig<T>) -> String {
    let file = RigFile {
        format: FORMAT.to_string(),
        handedness: rig.handedness,
        mesh_obj: Some(write_obj_string(&rig.rest_mesh)),
        mesh_path: None,
        limits_deg: rig.limits.bounds_deg.iter().map(|b| b.map(|x| x.as_f64())).collect(),
        weights: rig
            .skin_weights
            .iter()
            .map(|ws| ws.iter().map(|&(j, w)| (j, w.as_f64())).collect())
            .collect(),
        joints: rig
            .joints
            .iter()
            .map(|j| JointEntry {
                parent: j.parent.map_or(-1, |p| p as i64),
                offset: j.offset.to_array().map(|x| x.as_f64()),
            })
            .collect(),
    };
    toml::to_string(&file).expect("rig serialize")
}

/// Parses a rig; `base_dir` resolves a relative `mesh_path`.
pub fn parse_rig<T: Real>(text: &str, base_dir: Option<&Path>) -> Result<HandRig<T>, RigError> {
    let file: RigFile = toml::from_str(text).map_err(|e| RigError::Parse(e.to_string()))?;
    if file.format != FORMAT {
        return Err(RigError::Parse(format!("unsupported format {:?}, expected {FORMAT:?}", file.format)));
    }
    let mesh = match (&file.mesh_obj, &file.mesh_path) {
        (Some(obj), None) => parse_obj(obj)?,
        (None, Some(p)) => {
            let path = base_dir.map_or_else(|| Path::new(p).to_path_buf(), |d| d.join(p));
            let text = std::fs::read_to_string(&path).map_err(|source| {
                RigError::Mesh(GeometryError::Io { path: path.display().to_string(), source })
            })?;
            parse_obj(&text)?
        }
        _ => return Err(RigError::Parse("exactly one of mesh_obj and mesh_path is required".into())),
    };
    if file.joints.len() != ARTICULATED_JOINTS + 1 {
        return Err(RigError::JointCount { found: file.joints.len().saturating_sub(1) });
    }
    if file.limits_deg.len() != ARTICULATED_JOINTS {
        return Err(RigError::Parse(format!(
            "limits_deg needs {ARTICULATED_JOINTS} rows, found {}",
            file.limits_deg.len()
        )));
    }
    let mut bounds = [[0.0; 3]; ARTICULATED_JOINTS];
    bounds.copy_from_slice(&file.limits_deg);
    let mut joints = Vec::with_capacity(file.joints.len());
    for (j, e) in file.joints.iter().enumerate() {
        let parent = match e.parent {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            _ => return Err(RigError::ParentOrder { joint: j }),
        };
        joints.push(Joint { parent, offset: Vec3::from_array(e.offset.map(T::lit)) });
    }
    let weights = file
        .weights
        .iter()
        .map(|ws| ws.iter().map(|&(j, w)| (j, T::lit(w))).collect())
        .collect();
    HandRig::new(file.handedness, joints, mesh, weights, JointLimits::from_degrees(bounds))
}

pub fn load_rig<T: Real>(path: impl AsRef<Path>) -> Result<HandRig<T>, RigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| RigError::Io { path: path.display().to_string(), source })?;
    parse_rig(&text, path.parent())
}

pub fn save_rig<T: Real>(rig: &HandRig<T>, path: impl AsRef<Path>) -> Result<(), RigError> {
    let path = path.as_ref();
    std::fs::write(path, rig_to_string(rig))
        .map_err(|source| RigError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_rig::make_procedural_hand;

    #[test]
    fn procedural_rig_round_trips() {
        for h in [Handedness::Left, Handedness::Right] {
            let rig = make_procedural_hand::<f64>(h);
            let back: HandRig<f64> = parse_rig(&rig_to_string(&rig), None).unwrap();
            assert_eq!(back.handedness, h);
            assert_eq!(back.joints, rig.joints);
            assert_eq!(back.rest_mesh, rig.rest_mesh);
            assert_eq!(back.skin_weights, rig.skin_weights);
            assert_eq!(back.limits, rig.limits);
        }
    }

    #[test]
    fn referenced_mesh_resolves_next_to_rig() {
        let dir = tempfile::tempdir().unwrap();
        let rig = make_procedural_hand::<f64>(Handedness::Left);
        std::fs::write(dir.path().join("hand.obj"), write_obj_string(&rig.rest_mesh)).unwrap();
        let text = rig_to_string(&rig);
        let mut doc: toml::Table = toml::from_str(&text).unwrap();
        doc.remove("mesh_obj");
        doc.insert("mesh_path".into(), toml::Value::String("hand.obj".into()));
        std::fs::write(dir.path().join("hand.toml"), toml::to_string(&doc).unwrap()).unwrap();
        let back: HandRig<f64> = load_rig(dir.path().join("hand.toml")).unwrap();
        assert_eq!(back.rest_mesh, rig.rest_mesh);
    }

    #[test]
    fn bad_weight_names_vertex() {
        let rig = make_procedural_hand::<f64>(Handedness::Left);
        let mut doc: toml::Table = toml::from_str(&rig_to_string(&rig)).unwrap();
        let w = doc.get_mut("weights").unwrap().as_array_mut().unwrap();
        w[7] = toml::Value::try_from(vec![(0u32, 0.9f64)]).unwrap();
        let err = parse_rig::<f64>(&toml::to_string(&doc).unwrap(), None).unwrap_err();
        assert!(err.to_string().starts_with("vertex 7:"), "{err}");
    }
}
