//! Shadow-to-shadow transitions: fit both endpoint images, then blend the
//! parameters frame by frame with optional per-frame refinement.

use serde::{Deserialize, Serialize};

use crate::hand_rig::{clamp_pose, HandParams, HandRig};
use crate::losses::{ImageNorm, LossReport, LossWeights};
use crate::optimizer::{optimize, run_restart, OptimConfig, OptimError, Problem, RunRecord, Selection};
use crate::renderer::{Camera, GrayImage, RenderSettings};
use crate::scalar::Real;

/// Upper bound on refinement iterations per intermediate frame.
pub const MAX_REFINE_ITERATIONS: usize = 100;

/// Configuration for a run that starts from a fitted pose: one restart at the final
/// sigma with no coarse phase, so a start that is already optimal stays put.
pub fn warm_start(config: &OptimConfig, settings: &RenderSettings) -> (OptimConfig, RenderSettings) {
    let sigma = config.sigma_at(config.iterations, settings.sigma);
    (OptimConfig { restarts: 1, anneal: false, ..config.clone() }, RenderSettings { sigma, ..settings.clone() })
}

/// Fits the target of `problem_a` from a random start (or `init_a`), then `target_b`
/// from the result for A with the same rigs, under [`warm_start`].
pub fn optimize_pair<T: Real>(
    problem_a: &Problem<'_, T>,
    target_b: &GrayImage<T>,
    init_a: Option<Vec<HandParams<T>>>,
    config: &OptimConfig,
) -> Result<(RunRecord<T>, RunRecord<T>), OptimError> {
    if problem_a.targets.len() != 1 {
        return Err(OptimError::Config("optimize_pair needs exactly one target for A".into()));
    }
    problem_a.targets[0].0.same_size(target_b).map_err(|e| OptimError::Loss(e.into()))?;
    let a = optimize(problem_a, init_a, config)?;
    let (warm, settings) = warm_start(config, problem_a.settings);
    let problem_b =
        Problem { targets: vec![(target_b, T::one())], rigs: problem_a.rigs.clone(), settings: &settings, ..*problem_a };
    let b = optimize(&problem_b, Some(a.final_params.clone()), &warm)?;
    Ok((a, b))
}

/// Parameter blend at `alpha`: angles and translation linear, rotation slerp along the
/// short arc, then projected onto the limits. Exact at `alpha` 0 and 1.
pub fn blend<T: Real>(a: &HandParams<T>, b: &HandParams<T>, alpha: T, rig: &HandRig<T>) -> HandParams<T> {
    if alpha == T::zero() {
        return a.clone();
    }
    if alpha == T::one() {
        return b.clone();
    }
    let lerp = |x: T, y: T| x + (y - x) * alpha;
    let mut p = a.clone();
    for j in 0..p.theta.len() {
        for k in 0..3 {
            p.theta[j][k] = lerp(a.theta[j][k], b.theta[j][k]);
        }
    }
    p.rotation = a.rotation.slerp(b.rotation, alpha);
    p.translation.x = lerp(a.translation.x, b.translation.x);
    p.translation.y = lerp(a.translation.y, b.translation.y);
    p.translation.z = lerp(a.translation.z, b.translation.z);
    clamp_pose(&p, &rig.limits)
}

/// Inputs for blended refinement of intermediate frames.
pub struct RefineSpec<'a, T> {
    pub target_a: &'a GrayImage<T>,
    pub target_b: &'a GrayImage<T>,
    pub camera: &'a Camera,
    pub settings: &'a RenderSettings,
    pub weights: &'a LossWeights,
    pub config: &'a OptimConfig,
    /// Clamped to [`MAX_REFINE_ITERATIONS`].
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub alpha: f64,
    pub refined: bool,
    /// Objective of the kept refinement iterate, when refined.
    pub report: Option<LossReport>,
}

/// Frames `0..=T` of a transition, one parameter set per rig in each.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowSequence<T> {
    pub frames: Vec<Vec<HandParams<T>>>,
    pub records: Vec<FrameRecord>,
    pub refined: bool,
}

/// Blends `T + 1` frames from `a` to `b`. Endpoints are copied bit for bit; with
/// `refine`, each intermediate frame minimizes
/// `(1 - alpha) |I_A - R|^2 + alpha |I_B - R|^2 + pen` from its blend, keeping the
/// least-penetrating iterate and, among those, the lowest objective. Frames are
/// refined on worker threads; results do not depend on the thread count.
pub fn interpolate<T: Real>(
    a: &[HandParams<T>],
    b: &[HandParams<T>],
    rigs: &[&HandRig<T>],
    frames: usize,
    refine: Option<&RefineSpec<'_, T>>,
) -> Result<ShadowSequence<T>, OptimError> {
    if a.len() != rigs.len() || b.len() != rigs.len() {
        return Err(OptimError::HandCount { expected: rigs.len(), found: a.len().min(b.len()) });
    }
    let t = frames.max(1);
    let alpha = |i: usize| T::from_usize_lossy(i) / T::from_usize_lossy(t);
    let blended: Vec<Vec<HandParams<T>>> = (0..=t)
        .map(|i| {
            a.iter().zip(b).zip(rigs).map(|((pa, pb), rig)| blend(pa, pb, alpha(i), rig)).collect()
        })
        .collect();
    let mut records: Vec<FrameRecord> =
        (0..=t).map(|i| FrameRecord { index: i, alpha: alpha(i).as_f64(), refined: false, report: None }).collect();
    let Some(spec) = refine else {
        return Ok(ShadowSequence { frames: blended, records, refined: false });
    };
    spec.target_a.same_size(spec.target_b).map_err(|e| OptimError::Loss(e.into()))?;

    let inner: Vec<usize> = (1..t).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(inner.len().max(1));
    let mut results: Vec<Option<Result<(Vec<HandParams<T>>, LossReport), OptimError>>> =
        (0..inner.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = inner.len().div_ceil(workers.max(1)).max(1);
        for (slots, idx) in results.chunks_mut(chunk).zip(inner.chunks(chunk)) {
            let blended = &blended;
            scope.spawn(move || {
                for (slot, &i) in slots.iter_mut().zip(idx) {
                    *slot = Some(refine_frame(&blended[i], alpha(i), rigs, spec));
                }
            });
        }
    });
    let mut out = blended;
    for (slot, &i) in results.into_iter().zip(&inner) {
        let (params, report) = slot.expect("every frame refined")?;
        out[i] = params;
        records[i].refined = true;
        records[i].report = Some(report);
    }
    Ok(ShadowSequence { frames: out, records, refined: true })
}

fn refine_frame<T: Real>(
    start: &[HandParams<T>],
    alpha: T,
    rigs: &[&HandRig<T>],
    spec: &RefineSpec<'_, T>,
) -> Result<(Vec<HandParams<T>>, LossReport), OptimError> {
    let settings = RenderSettings { sigma: spec.config.sigma_end, ..spec.settings.clone() };
    let problem = Problem {
        targets: vec![(spec.target_a, T::one() - alpha), (spec.target_b, alpha)],
        rigs: rigs.to_vec(),
        camera: spec.camera,
        settings: &settings,
        weights: spec.weights,
        norm: ImageNorm::SumSquared,
    };
    let config = OptimConfig {
        iterations: spec.iterations.clamp(1, MAX_REFINE_ITERATIONS),
        restarts: 1,
        anneal: false,
        early_stop: false,
        snapshot_every: 0,
        final_rate_fraction: 1.0,
        ..spec.config.clone()
    };
    let rec = run_restart(&problem, 0, config.seed, start.to_vec(), &config, Selection::PenetrationFirst, &mut |_| {})?;
    match rec.best {
        Some(best) => Ok(best),
        None => Err(OptimError::AllRestartsAborted {
            last: match rec.status {
                crate::optimizer::RestartStatus::Aborted { reason, .. } => reason,
                other => format!("{other:?}"),
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_rig::{make_procedural_hand, Handedness};
    use crate::math::{Quat, Vec3};
    use crate::optimizer::random_init;

    #[test]
    fn endpoints_exact_and_degenerate_blend() {
        let l = make_procedural_hand::<f64>(Handedness::Left);
        let cam = Camera::with_resolution(32, 32);
        let a = random_init(1, &[&l], &cam);
        let b = random_init(2, &[&l], &cam);
        let seq = interpolate(&a, &b, &[&l], 4, None).unwrap();
        assert_eq!(seq.frames.len(), 5);
        assert_eq!(seq.frames[0], a);
        assert_eq!(seq.frames[4], b);
        for f in &seq.frames {
            assert!(f[0].within_limits(&l.limits));
        }
        let same = interpolate(&a, &a, &[&l], 2, None).unwrap();
        for f in &same.frames {
            for (x, y) in f[0].to_vec().iter().zip(a[0].to_vec()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_takes_short_arc() {
        let l = make_procedural_hand::<f64>(Handedness::Left);
        let mut a = HandParams::<f64>::rest();
        let mut b = HandParams::<f64>::rest();
        a.rotation = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.1);
        b.rotation = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.5).neg();
        let mid = blend(&a, &b, 0.5, &l);
        let expected = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3);
        assert!((mid.rotation.dot(expected).abs() - 1.0).abs() < 1e-12);
    }
}
