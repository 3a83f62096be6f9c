use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::{Handedness, ARTICULATED_JOINTS};

/// Finger order of the articulated joints: three consecutive joints per finger.
pub const FINGER_NAMES: [&str; 5] = ["index", "middle", "little", "ring", "thumb"];

/// Angular bounds in degrees about (x, y, z) for J.1, J.2, J.3 of each finger, right hand.
#[rustfmt::skip]
const RIGHT_BOUNDS_DEG: [[f64; 3]; ARTICULATED_JOINTS] = [
    // index
    [0.0, -15.0, -35.0], [0.0, 0.0, -45.0], [0.0, 0.0, -15.0],
    // middle
    [0.0, -25.0, -15.0], [0.0, 0.0, -15.0], [0.0, 0.0, -45.0],
    // little
    [0.0, -40.0, -35.0], [0.0, 0.0, -45.0], [0.0, 0.0, -5.0],
    // ring
    [0.0, -15.0, -35.0], [0.0, 0.0, -45.0], [0.0, 0.0, -15.0],
    // thumb
    [-50.0, -10.0, -30.0], [-10.0, -20.0, -10.0], [-5.0, -50.0, 0.0],
];

/// Same layout for the left hand.
#[rustfmt::skip]
const LEFT_BOUNDS_DEG: [[f64; 3]; ARTICULATED_JOINTS] = [
    // index
    [0.0, 25.0, 75.0], [0.0, 0.0, 45.0], [0.0, 0.0, 75.0],
    // middle
    [0.0, 10.0, 75.0], [0.0, 0.0, 55.0], [0.0, 0.0, 75.0],
    // little
    [0.0, 25.0, 75.0], [0.0, 0.0, 55.0], [0.0, 0.0, 65.0],
    // ring
    [0.0, 15.0, 75.0], [0.0, 0.0, 55.0], [0.0, 0.0, 75.0],
    // thumb
    [20.0, 30.0, 40.0], [10.0, 20.0, 20.0], [5.0, 25.0, 0.0],
];

/// Per-joint, per-axis one-sided angle bounds.
///
/// Each stored value `b` (degrees) is the far end of the interval
/// `[min(0, b), max(0, b)]`; zero pins the channel at its rest angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits<T> {
    pub bounds_deg: [[T; 3]; ARTICULATED_JOINTS],
}

impl<T: Real> JointLimits<T> {
    pub fn from_degrees(bounds: [[f64; 3]; ARTICULATED_JOINTS]) -> Self {
        Self { bounds_deg: bounds.map(|j| j.map(T::lit)) }
    }

    /// Signed bound in degrees for articulated joint `joint` (0-based) and axis.
    pub fn bound_deg(&self, joint: usize, axis: usize) -> T {
        self.bounds_deg[joint][axis]
    }

    /// Feasible interval in radians.
    pub fn interval(&self, joint: usize, axis: usize) -> (T, T) {
        let b = self.bounds_deg[joint][axis].to_radians();
        (b.min(T::zero()), b.max(T::zero()))
    }

    pub fn contains(&self, joint: usize, axis: usize, angle: T) -> bool {
        let (lo, hi) = self.interval(joint, axis);
        lo <= angle && angle <= hi
    }
}

/// The 45 joint bounds of one hand.
pub fn default_limits<T: Real>(handedness: Handedness) -> JointLimits<T> {
    match handedness {
        Handedness::Left => JointLimits::from_degrees(LEFT_BOUNDS_DEG),
        Handedness::Right => JointLimits::from_degrees(RIGHT_BOUNDS_DEG),
    }
}

/// Index of an articulated joint from a finger name and segment (1..=3).
pub fn joint_of(finger: &str, segment: usize) -> Option<usize> {
    let f = FINGER_NAMES.iter().position(|n| *n == finger)?;
    (1..=3).contains(&segment).then(|| f * 3 + segment - 1)
}
