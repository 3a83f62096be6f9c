use handshadow_core::autodiff::Tape;
use handshadow_core::geometry::TriMesh;
use handshadow_core::hand_rig::{forward_kinematics, make_procedural_hand, pose_mesh, skin, HandParamVars, Handedness};
use handshadow_core::math::Vec3;
use handshadow_core::renderer::{
    render_silhouette_hard, render_silhouette_soft, render_soft_values, Camera, GrayImage, RenderSettings,
};
use handshadow_core::targets::single_hand_pose;
use proptest::prelude::*;

/// Axis-aligned rectangle facing the camera at `depth`.
fn rectangle(x: [f64; 2], y: [f64; 2], depth: f64) -> TriMesh<f64> {
    let z = -depth;
    let v = vec![Vec3::new(x[0], y[0], z), Vec3::new(x[1], y[0], z), Vec3::new(x[1], y[1], z), Vec3::new(x[0], y[1], z)];
    TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
}

/// World-space point on the plane at `depth` seen through the center of pixel (r, c).
fn back_project(camera: &Camera, r: usize, c: usize, depth: f64) -> (f64, f64) {
    let half = (camera.fov_y_deg.to_radians() / 2.0).tan() * depth;
    let xn = (2 * c + 1) as f64 / camera.width as f64 - 1.0;
    let yn = 1.0 - (2 * r + 1) as f64 / camera.height as f64;
    (xn * half * camera.width as f64 / camera.height as f64, yn * half)
}

#[test]
fn hard_render_of_a_facing_rectangle_matches_back_projection() {
    let camera = Camera::with_resolution(48, 64);
    let (xs, ys, depth) = ([-0.071, 0.113], [-0.052, 0.087], 0.4);
    let img = render_silhouette_hard(&[&rectangle(xs, ys, depth)], &camera).unwrap();
    let mut count = 0;
    for r in 0..camera.height {
        for c in 0..camera.width {
            let (x, y) = back_project(&camera, r, c, depth);
            let inside = xs[0] < x && x < xs[1] && ys[0] < y && y < ys[1];
            assert_eq!(img.get(r, c) == 1.0, inside, "pixel ({r}, {c})");
            count += usize::from(inside);
        }
    }
    assert!(count > 100);
}

#[test]
fn geometry_outside_the_depth_range_is_culled() {
    let camera = Camera::with_resolution(16, 16);
    let behind = rectangle([-1.0, 1.0], [-1.0, 1.0], -0.5);
    let too_far = rectangle([-1.0, 1.0], [-1.0, 1.0], 20.0);
    for mesh in [&behind, &too_far] {
        assert_eq!(render_silhouette_hard(&[mesh], &camera).unwrap().foreground_count(), 0);
        let soft = render_soft_values(&[mesh], &camera, &RenderSettings::default()).unwrap();
        assert!(soft.pixels().iter().all(|&p| p == 0.0));
    }
}

#[test]
fn soft_converges_to_hard_as_sigma_shrinks() {
    let camera = Camera::with_resolution(96, 96);
    let mesh = pose_mesh(&make_procedural_hand::<f64>(Handedness::Right), &single_hand_pose()).unwrap();
    let hard = render_silhouette_hard(&[&mesh], &camera).unwrap();
    let gaps: Vec<f64> = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7]
        .iter()
        .map(|&s| render_soft_values(&[&mesh], &camera, &RenderSettings::with_sigma(s)).unwrap().mean_abs_diff(&hard).unwrap())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[4] < 0.01, "{gaps:?}");
}

#[test]
fn taped_render_is_bit_identical_to_the_value_render() {
    let camera = Camera::with_resolution(40, 56);
    let rig = make_procedural_hand::<f64>(Handedness::Right);
    let p = single_hand_pose::<f64>();
    let mut tape = Tape::new();
    let vars = HandParamVars::new(&mut tape, &p);
    let frames = forward_kinematics(&rig, &vars, &p.beta, &mut tape).unwrap();
    let mesh = skin(&rig, &frames, &mut tape);
    let settings = RenderSettings::with_sigma(3e-5);
    let taped = render_silhouette_soft(&[&mesh], &camera, &settings, &mut tape).unwrap();
    let plain = render_soft_values(&[&mesh.values(&tape)], &camera, &settings).unwrap();
    assert_eq!(taped.image, plain);
    let replayed: Vec<f64> = taped.pixels.iter().map(|&v| tape.replay()[v.index()]).collect();
    assert_eq!(replayed, plain.pixels());
}

#[test]
fn single_precision_render_tracks_double() {
    let camera = Camera::with_resolution(64, 64);
    let m64 = pose_mesh(&make_procedural_hand::<f64>(Handedness::Right), &single_hand_pose()).unwrap();
    let m32 = pose_mesh(&make_procedural_hand::<f32>(Handedness::Right), &single_hand_pose()).unwrap();
    let settings = RenderSettings::with_sigma(1e-4);
    let a = render_soft_values(&[&m64], &camera, &settings).unwrap();
    let b: GrayImage<f64> = render_soft_values(&[&m32], &camera, &settings).unwrap().cast();
    assert!(a.mean_abs_diff(&b).unwrap() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn whole_pixel_shifts_move_the_soft_image(k in 1usize..6, sigma in 1e-6f64..1e-3, w in 0.03f64..0.08) {
        let camera = Camera::with_resolution(32, 48);
        let depth = 0.5;
        let settings = RenderSettings::with_sigma(sigma);
        // One pixel column spans 2 / width in NDC.
        let (x0, _) = back_project(&camera, 0, 0, depth);
        let (x1, _) = back_project(&camera, 0, 1, depth);
        let dx = (x1 - x0) * k as f64;
        let base = rectangle([-w - 0.05, w - 0.05], [-w, 0.6 * w], depth);
        let moved = base.translated(Vec3::new(dx, 0.0, 0.0));
        let a = render_soft_values(&[&base], &camera, &settings).unwrap();
        let b = render_soft_values(&[&moved], &camera, &settings).unwrap();
        for r in 0..camera.height {
            for c in 0..camera.width - k {
                prop_assert!((a.get(r, c) - b.get(r, c + k)).abs() < 1e-9, "({}, {})", r, c);
            }
        }
        prop_assert!(a.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
