//! Gradient-based pose fitting: Adam with per-group learning rates, projection onto
//! the joint limits after every step, sigma annealing and random restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::hand_rig::{clamp_pose, palm_to_camera, pose_mesh, HandParams, HandRig, Handedness, ARTICULATED_JOINTS, POSE_DIM};
use crate::losses::{scene_penetration, ImageNorm, LossError, LossReport, LossWeights, Objective};
use crate::math::{Quat, Vec3};
use crate::renderer::{Camera, GrayImage, RenderSettings};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("every restart aborted; last: {last}")]
    AllRestartsAborted { last: String },
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("iteration {iteration}: {message}")]
    Invariant { iteration: usize, message: String },
    #[error("expected {expected} hands, found {found}")]
    HandCount { expected: usize, found: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub theta: f64,
    pub rotation: f64,
    pub translation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { theta: 0.01, rotation: 0.005, translation: 0.002 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub iterations: usize,
    pub rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Converged when `sum (I - R)^2 / (H W)` drops below this.
    pub image_tolerance: f64,
    /// Plateau when the best total improves by less than `min_rel_improvement` over `patience` iterations.
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub early_stop: bool,
    pub snapshot_every: usize,
    /// Log-linear sigma schedule from `sigma_start` to `sigma_end`, then held. Without
    /// annealing the render settings' sigma is used throughout.
    pub anneal: bool,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub anneal_fraction: f64,
    /// Learning rates decay geometrically after annealing, reaching this fraction
    /// of their initial value at the last iteration.
    pub final_rate_fraction: f64,
    /// Verify the projection invariants after every step.
    pub debug_checks: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            rates: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            restarts: 3,
            image_tolerance: 1e-3,
            patience: 200,
            min_rel_improvement: 1e-6,
            early_stop: true,
            snapshot_every: 50,
            anneal: true,
            sigma_start: 1e-4,
            sigma_end: 1e-6,
            anneal_fraction: 0.4,
            final_rate_fraction: 1.0,
            debug_checks: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        for (name, r) in [
            ("rates.theta", self.rates.theta),
            ("rates.rotation", self.rates.rotation),
            ("rates.translation", self.rates.translation),
            ("epsilon", self.epsilon),
            ("sigma_start", self.sigma_start),
            ("sigma_end", self.sigma_end),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("{name} must be positive, got {r}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.final_rate_fraction > 0.0 && self.final_rate_fraction <= 1.0) {
            return bad(format!("final_rate_fraction must be in (0, 1], got {}", self.final_rate_fraction));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return bad(format!("anneal_fraction must be in [0, 1], got {}", self.anneal_fraction));
        }
        if !(self.image_tolerance >= 0.0) || !(self.min_rel_improvement >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }

    /// Render sigma used at `iteration`; `fixed` is the sigma when annealing is off.
    pub fn sigma_at(&self, iteration: usize, fixed: f64) -> f64 {
        if !self.anneal {
            return fixed;
        }
        let span = self.anneal_end();
        if iteration >= span {
            return self.sigma_end;
        }
        let a = iteration as f64 / span as f64;
        self.sigma_start * (self.sigma_end / self.sigma_start).powf(a)
    }

    /// Multiplier applied to every learning rate at `iteration`.
    pub fn rate_scale(&self, iteration: usize) -> f64 {
        let start = self.anneal_end();
        if self.final_rate_fraction == 1.0 || iteration <= start || self.iterations <= start + 1 {
            return 1.0;
        }
        let a = (iteration - start) as f64 / (self.iterations - 1 - start) as f64;
        self.final_rate_fraction.powf(a.min(1.0))
    }

    fn anneal_end(&self) -> usize {
        if self.anneal {
            (self.anneal_fraction * self.iterations as f64).floor() as usize
        } else {
            0
        }
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![T::zero(); dim], v: vec![T::zero(); dim], step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected Adam update in place. Parameters are untouched on error.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    rate: T,
    hyper: AdamHyper,
) -> Result<(), OptimError> {
    assert_eq!(params.len(), grads.len(), "parameter and gradient dimensions");
    assert_eq!(params.len(), state.m.len(), "parameter and moment dimensions");
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    state.step += 1;
    let (b1, b2, eps) = (T::lit(hyper.beta1), T::lit(hyper.beta2), T::lit(hyper.epsilon));
    let one = T::one();
    let c1 = one - b1.powi(state.step as i32);
    let c2 = one - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Lateral wrist offset of each hand for random initialization, meters.
const TWO_HAND_SPREAD: f64 = 0.09;
const JITTER: f64 = 0.01;
const MAX_TILT_DEG: f64 = 30.0;
const DEPTH_RANGE: (f64, f64) = (0.35, 0.6);
const INIT_ATTEMPTS: usize = 64;

/// Random pose per rig, deterministic in `seed`.
///
/// Joint angles are uniform in the central half of each limit interval. The wrist
/// rotation is the palm-to-camera orientation composed with a random tilt of at
/// most 30 degrees, and the hand is centered near the optical axis at depth
/// 0.35-0.6 m (two hands side by side). Draws that interpenetrate are redrawn,
/// up to 64 times; failing that, the least penetrating draw is returned.
pub fn random_init<T: Real>(seed: u64, rigs: &[&HandRig<T>], camera: &Camera) -> Vec<HandParams<T>> {
    let _ = camera;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(T, Vec<HandParams<T>>)> = None;
    for _ in 0..INIT_ATTEMPTS {
        let candidate = sample_init(&mut rng, rigs);
        let pairs: Vec<_> = rigs.iter().copied().zip(&candidate).collect();
        let pen = scene_penetration(&pairs).unwrap_or(T::infinity());
        if pen == T::zero() {
            return candidate;
        }
        if best.as_ref().is_none_or(|(b, _)| pen < *b) {
            best = Some((pen, candidate));
        }
    }
    best.expect("at least one attempt").1
}

fn sample_init<T: Real>(rng: &mut ChaCha8Rng, rigs: &[&HandRig<T>]) -> Vec<HandParams<T>> {
    let n = rigs.len();
    let mixed = rigs.iter().any(|r| r.handedness != rigs[0].handedness);
    rigs.iter()
        .enumerate()
        .map(|(k, rig)| {
            let mut p = HandParams::<T>::rest();
            for j in 0..ARTICULATED_JOINTS {
                for a in 0..3 {
                    let (lo, hi) = rig.limits.interval(j, a);
                    let u: f64 = rng.gen();
                    p.theta[j][a] = lo + (hi - lo) * T::lit(0.25 + 0.5 * u);
                }
            }
            let axis = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0f64..1.0));
                let n2 = v.norm_squared();
                if n2 > 1e-6 && n2 <= 1.0 {
                    break v;
                }
            };
            let angle = MAX_TILT_DEG.to_radians() * rng.gen::<f64>();
            let tilt = Quat::from_axis_angle(axis, angle);
            let q = tilt.mul(palm_to_camera::<f64>(rig.handedness)).normalized();
            p.rotation = Quat::new(T::lit(q.w), T::lit(q.x), T::lit(q.y), T::lit(q.z));
            let depth = rng.gen_range(DEPTH_RANGE.0..DEPTH_RANGE.1);
            let lateral = if n == 1 {
                0.0
            } else if mixed {
                if rig.handedness == Handedness::Left { -TWO_HAND_SPREAD } else { TWO_HAND_SPREAD }
            } else {
                TWO_HAND_SPREAD * (2.0 * k as f64 / (n - 1) as f64 - 1.0)
            };
            let target = Vec3::new(lateral + rng.gen_range(-JITTER..JITTER), rng.gen_range(-JITTER..JITTER), -depth);
            // Center the posed mesh's bounding box on the target point.
            let posed = pose_mesh(rig, &p).expect("unit rotation");
            let b = posed.bounds();
            let center = (b.min + b.max) * T::lit(0.5);
            p.translation = Vec3::new(T::lit(target.x), T::lit(target.y), T::lit(target.z)) - center;
            p
        })
        .collect()
}

/// Optimized scene: the target, the rigs and the fixed viewing and loss settings.
pub struct Problem<'a, T> {
    pub targets: Vec<(&'a GrayImage<T>, T)>,
    pub rigs: Vec<&'a HandRig<T>>,
    pub camera: &'a Camera,
    pub settings: &'a RenderSettings,
    pub weights: &'a LossWeights,
    pub norm: ImageNorm,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(
        target: &'a GrayImage<T>,
        rigs: Vec<&'a HandRig<T>>,
        camera: &'a Camera,
        settings: &'a RenderSettings,
        weights: &'a LossWeights,
    ) -> Self {
        Self { targets: vec![(target, T::one())], rigs, camera, settings, weights, norm: ImageNorm::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub report: LossReport,
    pub sigma: f64,
    /// `sum (I - R)^2 / (H W)` against the first target.
    pub mean_squared: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub iteration: usize,
    pub params: Vec<HandParams<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestartStatus {
    Completed,
    Converged { iteration: usize },
    Plateau { iteration: usize },
    Aborted { iteration: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartRecord<T> {
    pub index: usize,
    pub seed: u64,
    pub init: Vec<HandParams<T>>,
    pub iterations: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot<T>>,
    pub status: RestartStatus,
    /// Lowest-total iterate after annealing, with its report.
    pub best: Option<(Vec<HandParams<T>>, LossReport)>,
    /// First iteration whose mean squared image error met the tolerance.
    pub first_within_tolerance: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T> {
    pub seed: u64,
    pub config: OptimConfig,
    pub restarts: Vec<RestartRecord<T>>,
    pub best_restart: usize,
    pub final_params: Vec<HandParams<T>>,
    pub final_report: LossReport,
    pub converged: bool,
}

/// Event passed to an observer after every accepted step.
pub struct StepEvent<'a, T> {
    pub restart: usize,
    pub iteration: usize,
    pub params: &'a [HandParams<T>],
    pub record: &'a IterationRecord,
}

/// Runs [`optimize_observed`] without an observer.
pub fn optimize<T: Real>(
    problem: &Problem<'_, T>,
    init: Option<Vec<HandParams<T>>>,
    config: &OptimConfig,
) -> Result<RunRecord<T>, OptimError> {
    optimize_observed(problem, init, config, &mut |_| {})
}

/// One hand only; identical machinery.
pub fn single_hand_mode<T: Real>(
    target: &GrayImage<T>,
    rig: &HandRig<T>,
    init: Option<HandParams<T>>,
    camera: &Camera,
    settings: &RenderSettings,
    weights: &LossWeights,
    config: &OptimConfig,
) -> Result<RunRecord<T>, OptimError> {
    let problem = Problem::new(target, vec![rig], camera, settings, weights);
    optimize(&problem, init.map(|p| vec![p]), config)
}

/// Restart 0 starts from `init` (or `random_init(seed)`); restart `k` from
/// `random_init(seed + k)`. Later restarts are skipped once one converges. The
/// restart with the lowest final image term wins.
pub fn optimize_observed<T: Real>(
    problem: &Problem<'_, T>,
    init: Option<Vec<HandParams<T>>>,
    config: &OptimConfig,
    observer: &mut dyn FnMut(&StepEvent<'_, T>),
) -> Result<RunRecord<T>, OptimError> {
    config.validate()?;
    problem.weights.validate()?;
    if let Some(i) = &init {
        if i.len() != problem.rigs.len() {
            return Err(OptimError::HandCount { expected: problem.rigs.len(), found: i.len() });
        }
    }
    let mut restarts = Vec::with_capacity(config.restarts);
    for k in 0..config.restarts {
        let seed = config.seed.wrapping_add(k as u64);
        let start = match (&init, k) {
            (Some(p), 0) => p.iter().zip(&problem.rigs).map(|(p, r)| clamp_pose(p, &r.limits)).collect(),
            _ => random_init(seed, &problem.rigs, problem.camera),
        };
        let rec = run_restart(problem, k, seed, start, config, Selection::Total, observer)?;
        let done = matches!(rec.status, RestartStatus::Converged { .. });
        restarts.push(rec);
        if done {
            break;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in restarts.iter().enumerate() {
        if let Some((_, rep)) = &r.best {
            if best.is_none_or(|(_, b)| rep.image_term < b) {
                best = Some((i, rep.image_term));
            }
        }
    }
    let Some((best_restart, _)) = best else {
        let last = restarts
            .iter()
            .rev()
            .find_map(|r| match &r.status {
                RestartStatus::Aborted { reason, .. } => Some(reason.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "no iterate evaluated".into());
        return Err(OptimError::AllRestartsAborted { last });
    };
    let (final_params, final_report) = restarts[best_restart].best.clone().expect("selected restart has a best iterate");
    let converged = restarts.iter().any(|r| matches!(r.status, RestartStatus::Converged { .. }));
    Ok(RunRecord { seed: config.seed, config: config.clone(), restarts, best_restart, final_params, final_report, converged })
}

fn mean_squared<T: Real>(target: &GrayImage<T>, render: &GrayImage<T>) -> f64 {
    let ss: f64 = target
        .pixels()
        .iter()
        .zip(render.pixels())
        .map(|(t, r)| {
            let d = t.as_f64() - r.as_f64();
            d * d
        })
        .sum();
    ss / target.pixels().len().max(1) as f64
}

/// How a restart picks its best iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Selection {
    /// Lowest total loss.
    Total,
    /// Least penetration first, then lowest total; pen values below `PEN_FREE` count as zero.
    PenetrationFirst,
}

/// Pen values at or below this are treated as contact-free by [`Selection::PenetrationFirst`].
pub(crate) const PEN_FREE: f64 = 1e-10;

fn selection_key(r: &LossReport) -> (f64, f64) {
    (if r.pen_term > PEN_FREE { r.pen_term } else { 0.0 }, r.total)
}

pub(crate) fn run_restart<T: Real>(
    problem: &Problem<'_, T>,
    index: usize,
    seed: u64,
    init: Vec<HandParams<T>>,
    config: &OptimConfig,
    selection: Selection,
    observer: &mut dyn FnMut(&StepEvent<'_, T>),
) -> Result<RestartRecord<T>, OptimError> {
    let hands = problem.rigs.len();
    let betas: Vec<_> = init.iter().map(|p| p.beta).collect();
    let mut params = init.clone();
    let mut states: Vec<[AdamState<T>; 3]> =
        (0..hands).map(|_| [AdamState::new(ARTICULATED_JOINTS * 3), AdamState::new(4), AdamState::new(3)]).collect();
    let rates = [config.rates.theta, config.rates.rotation, config.rates.translation].map(T::lit);
    let hyper = AdamHyper { beta1: config.beta1, beta2: config.beta2, epsilon: config.epsilon };
    let anneal_end = config.anneal_end();

    let mut rec = RestartRecord {
        index,
        seed,
        init,
        iterations: Vec::new(),
        snapshots: Vec::new(),
        status: RestartStatus::Completed,
        best: None,
        first_within_tolerance: None,
    };
    let mut best_total = f64::INFINITY;
    let mut last_improvement = anneal_end;
    let mut tape = Tape::with_capacity(1 << 18);

    for it in 0..config.iterations {
        if config.snapshot_every > 0 && it % config.snapshot_every == 0 {
            rec.snapshots.push(Snapshot { iteration: it, params: params.clone() });
        }
        let sigma = config.sigma_at(it, problem.settings.sigma);
        let settings = RenderSettings { sigma, ..problem.settings.clone() };
        let objective = Objective {
            targets: problem.targets.clone(),
            camera: problem.camera,
            settings: &settings,
            weights: problem.weights,
            norm: problem.norm,
        };
        tape = Tape::with_capacity(tape.len());
        let pairs: Vec<(&HandRig<T>, &HandParams<T>)> = problem.rigs.iter().copied().zip(&params).collect();
        let eval = objective.evaluate(&pairs, &mut tape)?;
        let mut report = eval.report.clone();
        report.iteration = it;
        let record = IterationRecord { report: report.clone(), sigma, mean_squared: mean_squared(problem.targets[0].0, &eval.render) };
        if !report.total.is_finite() {
            rec.status = RestartStatus::Aborted { iteration: it, reason: OptimError::NonFiniteLoss { iteration: it }.to_string() };
            break;
        }
        let post_anneal = it >= anneal_end;
        if post_anneal {
            if report.total < best_total {
                if report.total < best_total * (1.0 - config.min_rel_improvement) || !best_total.is_finite() {
                    last_improvement = it;
                }
                best_total = report.total;
            }
            let better = match (&rec.best, selection) {
                (None, _) => true,
                (Some((_, b)), Selection::Total) => report.total < b.total,
                (Some((_, b)), Selection::PenetrationFirst) => selection_key(&report) < selection_key(b),
            };
            if better {
                rec.best = Some((params.clone(), report.clone()));
            }
            if rec.first_within_tolerance.is_none() && record.mean_squared < config.image_tolerance {
                rec.first_within_tolerance = Some(it);
            }
        }
        rec.iterations.push(record);
        if config.early_stop && post_anneal {
            if rec.iterations.last().expect("pushed").mean_squared < config.image_tolerance {
                rec.status = RestartStatus::Converged { iteration: it };
                break;
            }
            if it >= last_improvement + config.patience {
                rec.status = RestartStatus::Plateau { iteration: it };
                break;
            }
        }
        if it + 1 == config.iterations {
            break;
        }

        let grads = tape.backward(eval.total);
        let mut step_err = None;
        for (h, vars) in eval.vars.iter().enumerate() {
            let flat: Vec<T> = vars.flat().iter().map(|&v| grads.wrt(v)).collect();
            let mut x = params[h].to_vec();
            let groups = [(0usize, ARTICULATED_JOINTS * 3), (45, 49), (49, POSE_DIM)];
            for (g, &(s, e)) in groups.iter().enumerate() {
                let rate = rates[g] * T::lit(config.rate_scale(it));
                if let Err(err) = adam_step(&mut x[s..e], &flat[s..e], &mut states[h][g], rate, hyper) {
                    let err = match err {
                        OptimError::NonFiniteGradient { index } => OptimError::NonFiniteGradient { index: h * POSE_DIM + s + index },
                        other => other,
                    };
                    step_err = Some(err);
                    break;
                }
            }
            if step_err.is_some() {
                break;
            }
            params[h].set_from_vec(&x);
            params[h] = clamp_pose(&params[h], &problem.rigs[h].limits);
        }
        if let Some(err) = step_err {
            rec.status = RestartStatus::Aborted { iteration: it, reason: err.to_string() };
            break;
        }
        if config.debug_checks {
            check_invariants(problem, &params, &betas, it)?;
        }
        observer(&StepEvent { restart: index, iteration: it + 1, params: &params, record: rec.iterations.last().expect("pushed") });
    }
    if rec.best.is_none() {
        // Too few iterations to leave the annealing phase: keep the last evaluated iterate.
        if let Some(last) = rec.iterations.last() {
            if !matches!(rec.status, RestartStatus::Aborted { .. }) {
                let last_params = rec.snapshots.last().filter(|s| s.iteration == last.report.iteration).map(|s| s.params.clone());
                rec.best = Some((last_params.unwrap_or_else(|| params.clone()), last.report.clone()));
            }
        }
    }
    Ok(rec)
}

fn check_invariants<T: Real>(
    problem: &Problem<'_, T>,
    params: &[HandParams<T>],
    betas: &[[T; 6]],
    iteration: usize,
) -> Result<(), OptimError> {
    for (h, p) in params.iter().enumerate() {
        let fail = |message: String| Err(OptimError::Invariant { iteration, message: format!("hand {h}: {message}") });
        if clamp_pose(p, &problem.rigs[h].limits) != *p {
            return fail("pose is not a clamp fixed point".into());
        }
        if (p.rotation.norm().as_f64() - 1.0).abs() > 1e-9 {
            return fail(format!("|Q| = {}", p.rotation.norm()));
        }
        if p.beta != betas[h] {
            return fail("shape parameters changed".into());
        }
    }
    Ok(())
}
