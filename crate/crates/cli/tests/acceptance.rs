//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! criterion fails. Built with `harness = false`, so the lines appear in `cargo test`
//! output without `--nocapture`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use handshadow::commands::{cmd_gradcheck, cmd_interpolate, cmd_optimize, InterpolateArgs, MANIFEST};
use handshadow::CliError;
use handshadow_core::geometry::shapes::icosphere;
use handshadow_core::hand_rig::{
    clamp_pose, default_limits, make_procedural_hand, params_to_string, pose_mesh, HandParams, HandRig, Handedness,
    VarMesh, ARTICULATED_JOINTS,
};
use handshadow_core::losses::{penetration_loss, penetration_value, scene_penetration, LossWeights};
use handshadow_core::math::Vec3;
use handshadow_core::optimizer::{optimize_observed, random_init, OptimConfig, Problem, RestartStatus};
use handshadow_core::renderer::{render_silhouette_hard, render_soft_values, Camera, GrayImage, RenderSettings};
use handshadow_core::targets::{bundled, single_hand_pose};
use handshadow_core::{Tape64, TriMesh64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rigs2() -> Vec<HandRig<f64>> {
    vec![make_procedural_hand(Handedness::Left), make_procedural_hand(Handedness::Right)]
}

fn hard_render(rigs: &[HandRig<f64>], params: &[HandParams<f64>], camera: &Camera) -> GrayImage<f64> {
    let meshes: Vec<TriMesh64> = rigs.iter().zip(params).map(|(r, p)| pose_mesh(r, p).unwrap()).collect();
    let refs: Vec<&TriMesh64> = meshes.iter().collect();
    render_silhouette_hard(&refs, camera).unwrap()
}

fn manifest_lines(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join(MANIFEST)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

// 1. Gradient correctness.
fn c1() -> Outcome {
    let t0 = Instant::now();
    let report = match cmd_gradcheck(0, false) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = t0.elapsed();
    let stages: Vec<String> = report.stages.iter().map(|s| format!("{} {:.1e}", s.name, s.worst_rel_error)).collect();
    let fault_named = matches!(cmd_gradcheck(0, true), Err(CliError::Gradcheck(m)) if m.contains("rasterizer"));
    let thresholds_ok = report.stages.iter().map(|s| s.threshold).eq([1e-4, 1e-4, 1e-3, 1e-3]);
    outcome(
        report.stages.len() == 4 && thresholds_ok && fault_named && elapsed < Duration::from_secs(120),
        format!("{} in {:.1?}; injected fault caught: {fault_named}", stages.join(", "), elapsed),
    )
}

// 2. Joint limits hold after every iteration of a 500-iteration debug run.
fn c2() -> Outcome {
    let right = default_limits::<f64>(Handedness::Right);
    let left = default_limits::<f64>(Handedness::Left);
    let spot = right.bounds_deg[12] == [-50.0, -10.0, -30.0] && left.bound_deg(1, 2) == 45.0;

    let rigs = rigs2();
    let camera = Camera::with_resolution(64, 64);
    let target = bundled::<f64>("bird", 64, 64).unwrap();
    let settings = RenderSettings::default();
    let weights = LossWeights::default();
    let problem = Problem::new(&target, rigs.iter().collect(), &camera, &settings, &weights);
    let config = OptimConfig { iterations: 500, restarts: 1, early_stop: false, debug_checks: true, ..Default::default() };
    let (mut checked, mut violations) = (0usize, 0usize);
    let mut check = |params: &[HandParams<f64>]| {
        for (p, r) in params.iter().zip(&rigs) {
            for j in 0..ARTICULATED_JOINTS {
                for a in 0..3 {
                    checked += 1;
                    violations += usize::from(!r.limits.contains(j, a, p.theta[j][a]));
                }
            }
        }
    };
    let rec = match optimize_observed(&problem, None, &config, &mut |ev| check(ev.params)) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    // Steps are observed after each update; the start and the returned pose complete the set.
    check(&rec.restarts[0].init);
    check(&rec.final_params);
    let iterations = rec.restarts[0].iterations.len();
    outcome(
        spot && violations == 0 && iterations == 500 && checked == 90 * 501,
        format!("{checked} channel checks over {iterations} iterations, {violations} violations; limit table spot values {spot}"),
    )
}

/// Reachable pose, its hard render and a start perturbed by at most 10 degrees per
/// angle and 2 cm in translation.
fn perturbed_problem(seed: u64, rigs: &[HandRig<f64>], camera: &Camera) -> (GrayImage<f64>, Vec<HandParams<f64>>) {
    let refs: Vec<&HandRig<f64>> = rigs.iter().collect();
    let truth = random_init(100 + seed, &refs, camera);
    let target = hard_render(rigs, &truth, camera);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = truth
        .iter()
        .zip(rigs)
        .map(|(p, rig)| {
            let mut q = p.clone();
            for j in 0..ARTICULATED_JOINTS {
                for a in 0..3 {
                    q.theta[j][a] += rng.gen_range(-10f64..10.0).to_radians();
                }
            }
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0f64..1.0));
            q.translation += d * (0.02 / 3f64.sqrt());
            clamp_pose(&q, &rig.limits)
        })
        .collect();
    (target, init)
}

const C3_CONFIG: &str = r#"target = "target.pgm"
init = "init.toml"
hands = 2
output_dir = "out"

[camera]
height = 128
width = 128

[optimizer]
iterations = 2000
restarts = 1
early_stop = false
"#;

/// Writes the criterion 3 inputs for `seed` into `dir`, runs `optimize` and returns
/// the IoU between the final hard render and the target.
fn run_c3_seed(dir: &Path, seed: u64) -> Result<f64, String> {
    let rigs = rigs2();
    let camera = Camera::with_resolution(128, 128);
    let (target, init) = perturbed_problem(seed, &rigs, &camera);
    target.write_pgm(dir.join("target.pgm")).map_err(|e| e.to_string())?;
    let labeled: Vec<_> = [Handedness::Left, Handedness::Right].into_iter().zip(init).collect();
    fs::write(dir.join("init.toml"), params_to_string(&labeled)).map_err(|e| e.to_string())?;
    fs::write(dir.join("run.toml"), format!("seed = {seed}\n{C3_CONFIG}")).map_err(|e| e.to_string())?;
    cmd_optimize(&dir.join("run.toml")).map_err(|e| e.to_string())?;
    let fitted = GrayImage::<f64>::read(dir.join("out/final_hard.pgm")).map_err(|e| e.to_string())?;
    fitted.iou(&target).map_err(|e| e.to_string())
}

// 3. Recovery of a reachable pose from a small perturbation.
fn c3(first_run: &Path) -> Outcome {
    let mut ious = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let dir = if seed == 0 { first_run.to_path_buf() } else { tempfile::tempdir().unwrap().keep() };
        let t0 = Instant::now();
        match run_c3_seed(&dir, seed) {
            Ok(iou) => ious.push(iou),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
        slowest = slowest.max(t0.elapsed());
        if seed != 0 {
            let _ = fs::remove_dir_all(&dir);
        }
    }
    let good = ious.iter().filter(|&&v| v > 0.95).count();
    let list: Vec<String> = ious.iter().map(|v| format!("{v:.4}")).collect();
    outcome(
        good >= 4 && slowest < Duration::from_secs(600),
        format!("IoU per seed [{}], {good}/5 above 0.95, slowest seed {slowest:.1?}", list.join(", ")),
    )
}

fn var_mesh(tape: &mut Tape64, m: &TriMesh64) -> VarMesh {
    VarMesh {
        vertices: m.vertices.iter().map(|v| v.to_array().map(|x| tape.leaf(x))).collect(),
        triangles: m.triangles.clone(),
    }
}

/// Solid-angle winding number of a closed mesh around `p`.
fn oracle_winding(mesh: &TriMesh64, p: Vec3<f64>) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t).map(|v| v - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(b.cross(c));
        let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

fn segment_distance(p: Vec3<f64>, a: Vec3<f64>, b: Vec3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to a triangle: the plane distance when the projection falls
/// inside, else the nearest edge.
fn triangle_distance(p: Vec3<f64>, [a, b, c]: [Vec3<f64>; 3]) -> f64 {
    let n = (b - a).cross(c - a).normalized();
    let h = (p - a).dot(n);
    let q = p - n * h;
    let inside = [(a, b), (b, c), (c, a)].iter().all(|&(u, v)| (v - u).cross(q - u).dot(n) >= 0.0);
    if inside {
        h.abs()
    } else {
        segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a))
    }
}

/// Sum of squared depths of `intruder` vertices inside `host`, by exhaustive search.
fn oracle_one_way(intruder: &TriMesh64, host: &TriMesh64) -> f64 {
    intruder
        .vertices
        .iter()
        .filter(|&&v| oracle_winding(host, v).abs() > 0.5)
        .map(|&v| {
            let d = (0..host.triangles.len()).map(|t| triangle_distance(v, host.corners(t))).fold(f64::INFINITY, f64::min);
            d * d
        })
        .sum()
}

// 4. Penetration penalty: separation, analytic two-sphere oracle, monotonicity.
fn c4() -> Outcome {
    // Two rest-pose hands whose bounding boxes are exactly 1 cm apart along x.
    let rigs = rigs2();
    let left = HandParams::<f64>::rest();
    let lb = pose_mesh(&rigs[0], &left).unwrap().bounds();
    let mut right = HandParams::<f64>::rest();
    let rb = pose_mesh(&rigs[1], &right).unwrap().bounds();
    right.translation = Vec3::new(lb.max.x - rb.min.x + 0.01, 0.0, 0.0);
    let apart = scene_penetration(&[(&rigs[0], &left), (&rigs[1], &right)]).unwrap();

    let r = 0.03;
    let a = icosphere::<f64>(r, 3);
    let mut values = Vec::new();
    let mut worst_rel = 0.0f64;
    for k in 0..11 {
        let d = 0.064 - 0.0035 * k as f64;
        let b = a.translated(Vec3::new(d, 0.0, 0.0));
        let oracle = oracle_one_way(&a, &b) + oracle_one_way(&b, &a);
        let brute = penetration_value(&a, &b).unwrap();
        let mut tape = Tape64::new();
        let (va, vb) = (var_mesh(&mut tape, &a), var_mesh(&mut tape, &b));
        let id = penetration_loss(&va, &vb, &mut tape).unwrap();
        let taped = tape.value(id);
        for v in [brute, taped] {
            worst_rel = worst_rel.max((v - oracle).abs() / oracle.abs().max(1e-12));
        }
        values.push(taped);
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0]) && values[10] > 0.0;
    let within = worst_rel <= 1e-5;
    outcome(
        apart == 0.0 && monotone && within,
        format!(
            "hands 1 cm apart: {apart:e}; sphere pen {:.3e} -> {:.3e} monotone {monotone}; worst rel deviation from oracle {worst_rel:.1e}",
            values[0], values[10]
        ),
    )
}

// 5. Soft render converges to the hard render as sigma shrinks.
fn c5() -> Outcome {
    let rig = make_procedural_hand::<f64>(Handedness::Right);
    let mesh = pose_mesh(&rig, &single_hand_pose()).unwrap();
    let camera = Camera::with_resolution(256, 256);
    let hard = render_silhouette_hard(&[&mesh], &camera).unwrap();
    let soft = render_soft_values(&[&mesh], &camera, &RenderSettings::with_sigma(1e-7)).unwrap();
    let diff = soft.mean_abs_diff(&hard).unwrap();
    outcome(diff < 0.01 && hard.foreground_count() > 1000, format!("mean |soft - hard| = {diff:.2e} at 256x256, sigma 1e-7"))
}

const C6_CONFIG: &str = r#"hands = 2
seed = 0
output_dir = "out"

[camera]
height = 128
width = 128

[optimizer]
iterations = 2000
restarts = 1
"#;

fn run_c6(dir: &Path) -> Result<(), CliError> {
    fs::write(dir.join("run.toml"), C6_CONFIG).unwrap();
    cmd_interpolate(&InterpolateArgs {
        a: "bundled:rabbit".into(),
        b: "bundled:bird".into(),
        frames: 30,
        refine: true,
        refine_iterations: 100,
        config: dir.join("run.toml"),
    })
}

// 6. Interpolation contract on the bundled rabbit to bird pair.
fn c6(first_run: &Path) -> Outcome {
    let t0 = Instant::now();
    if let Err(e) = run_c6(first_run) {
        return outcome(false, e.to_string());
    }
    let out = first_run.join("out");
    let read = |rel: &str| fs::read_to_string(out.join(rel)).unwrap();
    let endpoints_exact =
        read("frames/frame_0000.toml") == read("a_params.toml") && read("frames/frame_0030.toml") == read("b_params.toml");
    let frames: Vec<Value> = manifest_lines(&out).into_iter().filter(|l| l["kind"] == "frame").collect();
    let objs = fs::read_dir(out.join("frames"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "obj"))
        .count();
    let inner = &frames[1..frames.len() - 1];
    let worst_pen = inner.iter().map(|f| f["penetration"].as_f64().unwrap()).fold(0.0, f64::max);
    let limits = frames.iter().all(|f| f["within_limits"] == true);
    let refined = inner.iter().all(|f| f["refined"] == true);
    outcome(
        endpoints_exact && frames.len() == 31 && objs == 62 && worst_pen < 1e-6 && limits && refined,
        format!(
            "{} frames, {objs} OBJs, endpoints bit-exact {endpoints_exact}, worst intermediate pen {worst_pen:.2e}, limits {limits}, {:.1?}",
            frames.len(),
            t0.elapsed()
        ),
    )
}

// 7. Full-length two-hand run at the default resolution.
fn c7() -> Outcome {
    let rigs = rigs2();
    let camera = Camera::with_resolution(256, 256);
    let target = bundled::<f64>("rabbit", 256, 256).unwrap();
    let settings = RenderSettings::default();
    let weights = LossWeights::default();
    let problem = Problem::new(&target, rigs.iter().collect(), &camera, &settings, &weights);
    let config = OptimConfig { iterations: 5000, restarts: 1, early_stop: false, seed: 0, ..Default::default() };
    let t0 = Instant::now();
    let rec = match optimize_observed(&problem, None, &config, &mut |_| {}) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = t0.elapsed();
    let its = &rec.restarts[0].iterations;
    let terms: Vec<f64> = its.iter().map(|i| i.report.image_term).collect();
    let best_so_far: Vec<f64> = terms
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect();
    let finite = terms.iter().all(|v| v.is_finite());
    let non_increasing = best_so_far.windows(2).all(|w| w[1] <= w[0]);
    let completed = matches!(rec.restarts[0].status, RestartStatus::Completed);
    let improved = best_so_far[best_so_far.len() - 1] < terms[0];
    let iou = hard_render(&rigs, &rec.final_params, &camera).iou(&target).unwrap();
    outcome(
        completed && its.len() == 5000 && finite && non_increasing && improved && elapsed < Duration::from_secs(3600),
        format!(
            "{} iterations, best image term {:.3} -> {:.3}, final IoU {iou:.3}, {elapsed:.1?}",
            its.len(),
            terms[0],
            best_so_far[best_so_far.len() - 1]
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Compares every manifest, loss log and PGM of two output trees byte for byte.
fn identical_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files_under(a), files_under(b));
    if fa != fb {
        return Err(format!("file sets differ: {} vs {}", fa.len(), fb.len()));
    }
    let mut compared = 0;
    for rel in fa {
        let ext = rel.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "jsonl" | "pgm" | "toml") {
            continue;
        }
        if fs::read(a.join(&rel)).unwrap() != fs::read(b.join(&rel)).unwrap() {
            return Err(format!("{} differs", rel.display()));
        }
        compared += 1;
    }
    Ok(compared)
}

// 8. Determinism of criteria 3 and 6.
fn c8(c3_first: &Path, c6_first: &Path) -> Outcome {
    let c3_again = tempfile::tempdir().unwrap();
    let c6_again = tempfile::tempdir().unwrap();
    if let Err(e) = run_c3_seed(c3_again.path(), 0) {
        return outcome(false, format!("criterion 3 rerun: {e}"));
    }
    if let Err(e) = run_c6(c6_again.path()) {
        return outcome(false, format!("criterion 6 rerun: {e}"));
    }
    let r3 = identical_outputs(&c3_first.join("out"), &c3_again.path().join("out"));
    let r6 = identical_outputs(&c6_first.join("out"), &c6_again.path().join("out"));
    match (r3, r6) {
        (Ok(n3), Ok(n6)) => outcome(true, format!("{n3} + {n6} manifest, params and PGM files bit-identical")),
        (Err(e), _) => outcome(false, format!("criterion 3 rerun: {e}")),
        (_, Err(e)) => outcome(false, format!("criterion 6 rerun: {e}")),
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
    })
}

type Criterion<'a> = (u32, &'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn main() {
    // `cargo test -- --list` and name filters do not apply to this target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let c3_dir = tempfile::tempdir().unwrap();
    let c6_dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "gradient correctness", Box::new(c1)),
        (2, "joint limits", Box::new(c2)),
        (3, "objective fidelity", Box::new(|| c3(c3_dir.path()))),
        (4, "pen loss", Box::new(c4)),
        (5, "soft to hard consistency", Box::new(c5)),
        (6, "interpolation contract", Box::new(|| c6(c6_dir.path()))),
        (7, "default-scale run", Box::new(c7)),
        (8, "determinism", Box::new(|| c8(c3_dir.path(), c6_dir.path()))),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let t0 = Instant::now();
        let o = guarded(run);
        failed += usize::from(!o.passed);
        println!(
            "criterion {id} ({name}): {} [{:.1?}] {}",
            if o.passed { "PASS" } else { "FAIL" },
            t0.elapsed(),
            o.detail
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
