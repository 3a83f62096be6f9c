use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Quat, Vec3};
use crate::scalar::Real;

use super::{Handedness, JointLimits, RigError, ARTICULATED_JOINTS, SHAPE_PARAMS};

/// Parameters of one posed hand.
#[derive(Clone, Debug, PartialEq)]
pub struct HandParams<T> {
    /// Global scale followed by one length scale per finger. Never optimized.
    pub beta: [T; SHAPE_PARAMS],
    /// Euler angles (x, y, z) in radians per articulated joint.
    pub theta: [[T; 3]; ARTICULATED_JOINTS],
    /// Global rotation of the wrist frame.
    pub rotation: Quat<T>,
    /// Wrist position, meters.
    pub translation: Vec3<T>,
}

impl<T: Real> HandParams<T> {
    pub fn rest() -> Self {
        Self {
            beta: [T::one(); SHAPE_PARAMS],
            theta: [[T::zero(); 3]; ARTICULATED_JOINTS],
            rotation: Quat::identity(),
            translation: Vec3::zero(),
        }
    }

    /// Optimized parameters flattened as theta (45), quaternion (4), translation (3).
    pub fn to_vec(&self) -> Vec<T> {
        let mut v: Vec<T> = self.theta.iter().flatten().copied().collect();
        v.extend(self.rotation.to_array());
        v.extend(self.translation.to_array());
        v
    }

    /// Inverse of [`HandParams::to_vec`]; `beta` is kept.
    pub fn set_from_vec(&mut self, v: &[T]) {
        assert_eq!(v.len(), POSE_DIM, "pose vector length");
        for (j, angles) in self.theta.iter_mut().enumerate() {
            angles.copy_from_slice(&v[j * 3..j * 3 + 3]);
        }
        self.rotation = Quat::new(v[45], v[46], v[47], v[48]);
        self.translation = Vec3::new(v[49], v[50], v[51]);
    }

    pub fn within_limits(&self, limits: &JointLimits<T>) -> bool {
        (0..ARTICULATED_JOINTS).all(|j| (0..3).all(|a| limits.contains(j, a, self.theta[j][a])))
    }
}

/// Number of optimized scalars per hand.
pub const POSE_DIM: usize = ARTICULATED_JOINTS * 3 + 4 + 3;

/// Projects the pose onto the joint limits and renormalizes the rotation.
///
/// The quaternion is only rescaled when its norm is off by more than 1e-12, which
/// keeps the projection idempotent bit for bit.
pub fn clamp_pose<T: Real>(params: &HandParams<T>, limits: &JointLimits<T>) -> HandParams<T> {
    let mut out = params.clone();
    for (j, angles) in out.theta.iter_mut().enumerate() {
        for (a, angle) in angles.iter_mut().enumerate() {
            let (lo, hi) = limits.interval(j, a);
            *angle = angle.max(lo).min(hi);
        }
    }
    let n = out.rotation.norm();
    if (n - T::one()).abs() > T::lit(1e-12) {
        out.rotation = out.rotation.normalized();
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    hands: Vec<HandEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandEntry {
    handedness: Handedness,
    beta: Vec<f64>,
    theta_deg: Vec<[f64; 3]>,
    /// Row-major 3x3 rotation matrix.
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Serializes posed hands as a params file (TOML, angles in degrees).
pub fn params_to_string<T: Real>(hands: &[(Handedness, HandParams<T>)]) -> String {
    let file = ParamsFile {
        hands: hands
            .iter()
            .map(|(h, p)| HandEntry {
                handedness: *h,
                beta: p.beta.iter().map(|b| b.as_f64()).collect(),
                theta_deg: p.theta.iter().map(|j| j.map(|a| a.as_f64().to_degrees())).collect(),
                rotation: p.rotation.to_matrix().row_major().map(|x| x.as_f64()),
                translation: p.translation.to_array().map(|x| x.as_f64()),
            })
            .collect(),
    };
    toml::to_string(&file).expect("params serialize")
}

/// Parses a params file. Rotation matrices are converted back to unit quaternions.
pub fn parse_params<T: Real>(text: &str) -> Result<Vec<(Handedness, HandParams<T>)>, RigError> {
    let file: ParamsFile = toml::from_str(text).map_err(|e| RigError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(file.hands.len());
    for (i, h) in file.hands.into_iter().enumerate() {
        if h.beta.len() != SHAPE_PARAMS {
            return Err(RigError::Parse(format!(
                "hand {i}: beta needs {SHAPE_PARAMS} values, found {}",
                h.beta.len()
            )));
        }
        if h.theta_deg.len() != ARTICULATED_JOINTS {
            return Err(RigError::JointCount { found: h.theta_deg.len() });
        }
        let mut values = h.beta.iter().chain(h.theta_deg.iter().flatten()).chain(&h.rotation).chain(&h.translation);
        if let Some(v) = values.find(|v| !v.is_finite()) {
            return Err(RigError::Parse(format!("hand {i}: non-finite value {v}")));
        }
        let m = Mat3::from_row_major(h.rotation.map(T::lit));
        let mtm = m.transpose().mul_mat(&m);
        let ortho_err = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| {
                let id = if r == c { 1.0 } else { 0.0 };
                (mtm.0[r][c].as_f64() - id).abs()
            })
            .fold(0.0, f64::max);
        if ortho_err > 1e-6 {
            return Err(RigError::Parse(format!("hand {i}: rotation matrix is not orthonormal")));
        }
        let mut beta = [T::one(); SHAPE_PARAMS];
        for (b, v) in beta.iter_mut().zip(&h.beta) {
            *b = T::lit(*v);
        }
        let mut theta = [[T::zero(); 3]; ARTICULATED_JOINTS];
        for (t, v) in theta.iter_mut().zip(&h.theta_deg) {
            *t = v.map(|d| T::lit(d.to_radians()));
        }
        out.push((
            h.handedness,
            HandParams {
                beta,
                theta,
                rotation: Quat::from_matrix(&m),
                translation: Vec3::from_array(h.translation.map(T::lit)),
            },
        ));
    }
    Ok(out)
}

/// The parameters exactly as they read back from a params file.
pub fn through_params_file<T: Real>(hands: &[(Handedness, HandParams<T>)]) -> Vec<(Handedness, HandParams<T>)> {
    parse_params(&params_to_string(hands)).expect("own params output parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_rig::default_limits;

    #[test]
    fn clamp_examples() {
        let limits = default_limits::<f64>(Handedness::Right);
        let mut p = HandParams::rest();
        p.theta[12][0] = (-80f64).to_radians();
        let c = clamp_pose(&p, &limits);
        assert!((c.theta[12][0].to_degrees() + 50.0).abs() < 1e-12);

        let left = default_limits::<f64>(Handedness::Left);
        let mut p = HandParams::rest();
        p.theta[0][1] = 40f64.to_radians();
        let c = clamp_pose(&p, &left);
        assert!((c.theta[0][1].to_degrees() - 25.0).abs() < 1e-12);

        let mut inside = HandParams::rest();
        inside.theta[0][2] = 0.3;
        assert_eq!(clamp_pose(&inside, &left), inside);
    }

    #[test]
    fn clamp_renormalizes_rotation_only() {
        let limits = default_limits::<f64>(Handedness::Left);
        let mut p = HandParams::rest();
        p.rotation = Quat::new(2.0, 0.0, 0.0, 0.0);
        p.translation = Vec3::new(0.1, 0.2, -0.3);
        let c = clamp_pose(&p, &limits);
        assert_eq!(c.rotation, Quat::identity());
        assert_eq!(c.translation, p.translation);
    }

    #[test]
    fn params_file_round_trip_is_stable() {
        let mut p = HandParams::<f64>::rest();
        p.theta[3][2] = 0.4;
        p.rotation = Quat::from_axis_angle(Vec3::new(0.3, 1.0, -0.2), 0.8);
        p.translation = Vec3::new(0.01, -0.02, -0.45);
        let once = through_params_file(&[(Handedness::Left, p.clone())]);
        let (h, q) = &once[0];
        assert_eq!(*h, Handedness::Left);
        assert!((q.theta[3][2] - 0.4).abs() < 1e-14);
        assert!((q.rotation.dot(p.rotation).abs() - 1.0).abs() < 1e-12);
        assert_eq!(q.translation, p.translation);
    }

    #[test]
    fn rejects_non_rotation() {
        let text = "[[hands]]\nhandedness = \"left\"\nbeta = [1,1,1,1,1,1]\ntheta_deg = []\nrotation = [1,0,0,0,1,0,0,0,1]\ntranslation = [0,0,0]\n";
        assert!(matches!(parse_params::<f64>(text), Err(RigError::JointCount { found: 0 })));
        let bad = text.replace("theta_deg = []", &format!("theta_deg = [{}]", vec!["[0,0,0]"; 15].join(",")))
            .replace("[1,0,0,0,1,0,0,0,1]", "[2,0,0,0,1,0,0,0,1]");
        assert!(matches!(parse_params::<f64>(&bad), Err(RigError::Parse(_))));
    }
}
