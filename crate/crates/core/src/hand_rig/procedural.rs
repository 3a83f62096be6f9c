use crate::geometry::shapes;
#[cfg(test)]
use crate::geometry::TriMesh;
use crate::math::{Mat3, Quat, Vec3};
use crate::scalar::Real;

use super::{default_limits, HandRig, Handedness, Joint};

/// Nominal palm width the procedural geometry is designed around, meters.
pub const PROCEDURAL_WIDTH: f64 = 0.09;

const AROUND: usize = 8;
const CAP_RINGS: usize = 1;
const BODY_RINGS: usize = 1;

struct FingerSpec {
    base: [f64; 3],
    radius: f64,
    lengths: [f64; 3],
}

// Left hand frame: fingers along +x, palm normal +y, thumb toward -z.
#[rustfmt::skip]
const FINGERS: [FingerSpec; 4] = [
    FingerSpec { base: [0.085, 0.0, -0.0225], radius: 0.0068, lengths: [0.040, 0.024, 0.020] }, // index
    FingerSpec { base: [0.087, 0.0, -0.0075], radius: 0.0070, lengths: [0.044, 0.028, 0.021] }, // middle
    FingerSpec { base: [0.080, 0.0,  0.0225], radius: 0.0058, lengths: [0.032, 0.019, 0.018] }, // little
    FingerSpec { base: [0.085, 0.0,  0.0075], radius: 0.0066, lengths: [0.041, 0.026, 0.020] }, // ring
];
const THUMB: FingerSpec = FingerSpec { base: [0.014, 0.0, -0.031], radius: 0.0075, lengths: [0.030, 0.026, 0.022] };
const THUMB_SPLAY_DEG: f64 = 18.0;
const PALM_MIN: [f64; 3] = [0.0, -0.011, -0.030];
const PALM_MAX: [f64; 3] = [0.085, 0.011, 0.030];
const PALM_DIVISIONS: [usize; 3] = [8, 2, 5];

/// Low-poly hand at the nominal scale.
pub fn make_procedural_hand<T: Real>(handedness: Handedness) -> HandRig<T> {
    make_procedural_hand_scaled(handedness, T::lit(PROCEDURAL_WIDTH))
}

/// Procedural hand scaled uniformly so its design width equals `width` meters.
///
/// Palm box plus three rigidly skinned capsules per finger, 1464 triangles.
/// The right hand is the left hand mirrored across `x = 0`.
pub fn make_procedural_hand_scaled<T: Real>(handedness: Handedness, width: T) -> HandRig<T> {
    let s = width.as_f64() / PROCEDURAL_WIDTH;
    let v = |a: [f64; 3]| Vec3::new(T::lit(a[0] * s), T::lit(a[1] * s), T::lit(a[2] * s));

    let mut joints = vec![Joint { parent: None, offset: Vec3::zero() }];
    let mut mesh = shapes::box_grid(v(PALM_MIN), v(PALM_MAX), PALM_DIVISIONS);
    let mut weights: Vec<Vec<(u32, T)>> = vec![vec![(0, T::one())]; mesh.vertices.len()];

    let splay = THUMB_SPLAY_DEG.to_radians();
    let thumb_dir = [splay.cos(), 0.0, -splay.sin()];
    for (spec, dir) in FINGERS.iter().map(|f| (f, [1.0, 0.0, 0.0])).chain([(&THUMB, thumb_dir)]) {
        let mut at = spec.base;
        let mut offset = spec.base;
        for (k, &len) in spec.lengths.iter().enumerate() {
            let joint = joints.len();
            let parent = if k == 0 { 0 } else { joint - 1 };
            joints.push(Joint { parent: Some(parent), offset: v(offset) });
            let end = [0, 1, 2].map(|i| at[i] + dir[i] * len);
            let part = shapes::capsule(v(at), v(end), T::lit(spec.radius * s), AROUND, CAP_RINGS, BODY_RINGS);
            weights.extend(std::iter::repeat_n(vec![(joint as u32, T::one())], part.vertices.len()));
            mesh.append(&part);
            offset = [0, 1, 2].map(|i| dir[i] * len);
            at = end;
        }
    }

    if handedness == Handedness::Right {
        mesh = shapes::mirror_x(&mesh);
        for j in &mut joints {
            j.offset.x = -j.offset.x;
        }
    }
    HandRig::new(handedness, joints, mesh, weights, default_limits(handedness)).expect("procedural rig is valid")
}

/// Wrist rotation that puts the procedural palm toward a camera looking down `-z`
/// with the fingers pointing up (`+y`).
pub fn palm_to_camera<T: Real>(handedness: Handedness) -> Quat<T> {
    let (o, z) = (T::one(), T::zero());
    // Columns are the world images of the hand axes.
    let m = match handedness {
        // x -> y, y -> z, z -> x
        Handedness::Left => Mat3([[z, z, o], [o, z, z], [z, o, z]]),
        // -x -> y, y -> z, z -> -x
        Handedness::Right => Mat3([[z, z, -o], [-o, z, z], [z, o, z]]),
    };
    Quat::from_matrix(&m)
}
