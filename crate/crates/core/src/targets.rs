//! Built-in target silhouettes.
//!
//! Rabbit and bird are hard renders of fixed two-hand poses of the procedural
//! rigs, so every bundled shadow is reachable by construction. Disc and ellipse
//! are analytic shapes; `hand` is a single-hand self-render.

use crate::hand_rig::{
    make_procedural_hand, palm_to_camera, pose_mesh, HandParams, HandRig, Handedness, ARTICULATED_JOINTS,
};
use crate::math::{Quat, Vec3};
use crate::renderer::{pixel_center, render_silhouette_hard, Camera, GrayImage};
use crate::scalar::Real;

/// Names accepted by [`bundled`].
pub const BUNDLED_NAMES: [&str; 5] = ["rabbit", "bird", "disc", "ellipse", "hand"];

/// Resolution of the stored target files.
pub const BUNDLED_SIZE: usize = 256;

/// Pose of one hand written as fractions of its joint bounds.
struct PoseSpec {
    handedness: Handedness,
    /// Per joint and axis, in [0, 1]: the angle is `fraction * bound`.
    fractions: [[f64; 3]; ARTICULATED_JOINTS],
    /// In-plane rotation about the viewing axis applied after palm-to-camera, degrees.
    roll_deg: f64,
    /// Rotation about the world x axis applied after the roll, degrees.
    tilt_deg: f64,
    wrist: [f64; 3],
}

const STRAIGHT: [f64; 3] = [0.0, 0.0, 0.0];
const CURLED: [f64; 3] = [0.0, 0.0, 0.9];

fn finger(j1: [f64; 3], j2: [f64; 3], j3: [f64; 3]) -> [[f64; 3]; 3] {
    [j1, j2, j3]
}

fn hand_fractions(fingers: [[[f64; 3]; 3]; 5]) -> [[f64; 3]; ARTICULATED_JOINTS] {
    let mut out = [[0.0; 3]; ARTICULATED_JOINTS];
    for (f, joints) in fingers.iter().enumerate() {
        out[f * 3..f * 3 + 3].copy_from_slice(joints);
    }
    out
}

fn pose_from_spec<T: Real>(spec: &PoseSpec, rig: &HandRig<T>) -> HandParams<T> {
    let mut p = HandParams::<T>::rest();
    for j in 0..ARTICULATED_JOINTS {
        for a in 0..3 {
            let b = rig.limits.bound_deg(j, a).as_f64();
            p.theta[j][a] = T::lit((spec.fractions[j][a] * b).to_radians());
        }
    }
    let roll = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), spec.roll_deg.to_radians());
    let tilt = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), spec.tilt_deg.to_radians());
    let q = tilt.mul(roll).mul(palm_to_camera::<f64>(spec.handedness)).normalized();
    p.rotation = Quat::new(T::lit(q.w), T::lit(q.x), T::lit(q.y), T::lit(q.z));
    p.translation = Vec3::new(T::lit(spec.wrist[0]), T::lit(spec.wrist[1]), T::lit(spec.wrist[2]));
    p
}

fn rabbit_specs() -> [PoseSpec; 2] {
    [
        // Head and ears: index and middle raised in a V, the rest folded.
        PoseSpec {
            handedness: Handedness::Left,
            fractions: hand_fractions([
                finger([0.0, 1.0, 0.1], STRAIGHT, STRAIGHT),
                finger(STRAIGHT, [0.0, 0.0, 0.1], STRAIGHT),
                finger(CURLED, CURLED, CURLED),
                finger(CURLED, CURLED, CURLED),
                finger([0.5, 0.5, 1.0], [0.5, 0.5, 1.0], [0.5, 0.5, 0.0]),
            ]),
            roll_deg: -15.0,
            tilt_deg: 0.0,
            wrist: [-0.03, -0.02, -0.45],
        },
        // Body: the other hand held flat and sideways behind the head.
        PoseSpec {
            handedness: Handedness::Right,
            fractions: hand_fractions([
                finger(STRAIGHT, [0.0, 0.0, 0.2], STRAIGHT),
                finger(STRAIGHT, [0.0, 0.0, 0.2], STRAIGHT),
                finger([0.0, 0.0, 0.3], [0.0, 0.0, 0.3], STRAIGHT),
                finger([0.0, 0.0, 0.2], [0.0, 0.0, 0.2], STRAIGHT),
                finger([0.5, 0.0, 0.5], STRAIGHT, STRAIGHT),
            ]),
            roll_deg: 95.0,
            tilt_deg: 25.0,
            wrist: [0.10, -0.075, -0.56],
        },
    ]
}

fn bird_specs() -> [PoseSpec; 2] {
    let wing = |h| PoseSpec {
        handedness: h,
        fractions: hand_fractions([
            finger([0.0, 0.3, 0.1], STRAIGHT, STRAIGHT),
            finger([0.0, 0.2, 0.1], STRAIGHT, STRAIGHT),
            finger([0.0, 0.0, 0.1], STRAIGHT, STRAIGHT),
            finger([0.0, 0.1, 0.1], STRAIGHT, STRAIGHT),
            finger([0.5, 0.5, 0.0], STRAIGHT, STRAIGHT),
        ]),
        roll_deg: 0.0,
        tilt_deg: 0.0,
        wrist: [0.0, 0.0, 0.0],
    };
    let mut l = wing(Handedness::Left);
    l.roll_deg = 55.0;
    l.wrist = [0.02, -0.06, -0.44];
    let mut r = wing(Handedness::Right);
    r.roll_deg = -55.0;
    r.wrist = [-0.02, -0.06, -0.50];
    [l, r]
}

/// Left and right hand parameters of the rabbit shadow.
pub fn rabbit_pose<T: Real>() -> [HandParams<T>; 2] {
    let [l, r] = rabbit_specs();
    [
        pose_from_spec(&l, &make_procedural_hand::<T>(Handedness::Left)),
        pose_from_spec(&r, &make_procedural_hand::<T>(Handedness::Right)),
    ]
}

/// Left and right hand parameters of the bird shadow.
pub fn bird_pose<T: Real>() -> [HandParams<T>; 2] {
    let [l, r] = bird_specs();
    [
        pose_from_spec(&l, &make_procedural_hand::<T>(Handedness::Left)),
        pose_from_spec(&r, &make_procedural_hand::<T>(Handedness::Right)),
    ]
}

/// Right hand alone, palm to camera with a relaxed curl.
pub fn single_hand_pose<T: Real>() -> HandParams<T> {
    let spec = PoseSpec {
        handedness: Handedness::Right,
        fractions: hand_fractions([
            finger([0.0, 0.5, 0.2], [0.0, 0.0, 0.2], STRAIGHT),
            finger([0.0, 0.2, 0.1], [0.0, 0.0, 0.2], STRAIGHT),
            finger([0.0, 0.0, 0.4], [0.0, 0.0, 0.3], [0.0, 0.0, 0.3]),
            finger([0.0, 0.3, 0.3], [0.0, 0.0, 0.2], STRAIGHT),
            finger([0.3, 0.3, 0.3], [0.2, 0.2, 0.2], [0.2, 0.2, 0.0]),
        ]),
        roll_deg: 10.0,
        tilt_deg: 0.0,
        wrist: [0.0, -0.08, -0.45],
    };
    pose_from_spec(&spec, &make_procedural_hand::<T>(Handedness::Right))
}

fn render_two<T: Real>(poses: &[HandParams<T>; 2], camera: &Camera) -> GrayImage<T> {
    let rigs = [make_procedural_hand::<T>(Handedness::Left), make_procedural_hand::<T>(Handedness::Right)];
    let meshes: Vec<_> = rigs.iter().zip(poses).map(|(r, p)| pose_mesh(r, p).expect("unit rotation")).collect();
    render_silhouette_hard(&[&meshes[0], &meshes[1]], camera).expect("two meshes")
}

/// Filled ellipse with semi-axes given as fractions of the half-extent of NDC.
fn ellipse<T: Real>(height: usize, width: usize, center: [f64; 2], axes: [f64; 2]) -> GrayImage<T> {
    let mut px = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let [x, y]: [f64; 2] = pixel_center(r, c, height, width);
            let u = (x - center[0]) / axes[0];
            let v = (y - center[1]) / axes[1];
            px.push(if u * u + v * v <= 1.0 { T::one() } else { T::zero() });
        }
    }
    GrayImage::new(height, width, px).expect("binary pixels")
}

/// A bundled target rendered at `height` x `width` with the default camera field of view.
pub fn bundled<T: Real>(name: &str, height: usize, width: usize) -> Option<GrayImage<T>> {
    let camera = Camera::with_resolution(height, width);
    Some(match name {
        "rabbit" => render_two(&rabbit_pose(), &camera),
        "bird" => render_two(&bird_pose(), &camera),
        "disc" => ellipse(height, width, [0.0, 0.0], [0.3, 0.3]),
        "ellipse" => ellipse(height, width, [0.0, -0.1], [0.25, 0.4]),
        "hand" => {
            let rig = make_procedural_hand::<T>(Handedness::Right);
            let mesh = pose_mesh(&rig, &single_hand_pose()).expect("unit rotation");
            render_silhouette_hard(&[&mesh], &camera).expect("one mesh")
        }
        _ => return None,
    })
}
