//! Inverse rendering of hand shadows.
//!
//! One or two articulated hands are posed so that their rendered silhouette matches a
//! target image. Everything numeric is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common cases.

// `!(x > y)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity, clippy::should_implement_trait)]

pub mod autodiff;
pub mod geometry;
pub mod gradcheck;
pub mod hand_rig;
pub mod interpolation;
pub mod losses;
pub mod math;
pub mod optimizer;
pub mod renderer;
pub mod scalar;
pub mod targets;

pub use scalar::Real;

pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type TriMesh64 = geometry::TriMesh<f64>;
pub type TriMesh32 = geometry::TriMesh<f32>;
pub type HandRig64 = hand_rig::HandRig<f64>;
pub type HandRig32 = hand_rig::HandRig<f32>;
pub type HandParams64 = hand_rig::HandParams<f64>;
pub type HandParams32 = hand_rig::HandParams<f32>;
pub type GrayImage64 = renderer::GrayImage<f64>;
pub type GrayImage32 = renderer::GrayImage<f32>;
pub type Vec3d = math::Vec3<f64>;
pub type Vec3f = math::Vec3<f32>;
pub type Quatd = math::Quat<f64>;
pub type Quatf = math::Quat<f32>;
