use std::path::{Path, PathBuf};

use handshadow_core::gradcheck::{run_gradcheck, GradcheckReport};
use handshadow_core::hand_rig::{pose_mesh, through_params_file, HandParams, HandRig, Handedness};
use handshadow_core::interpolation::{interpolate, optimize_pair, warm_start, RefineSpec};
use handshadow_core::losses::{scene_penetration, LossReport};
use handshadow_core::optimizer::{optimize_observed, Problem, RunRecord, StepEvent};
use handshadow_core::renderer::{
    render_silhouette_hard, render_soft_values, wall_composite, Camera, GrayImage, RenderSettings,
};
use handshadow_core::targets::{bundled, BUNDLED_NAMES};
use serde_json::json;

use crate::config::{load_target, make_rigs, Loaded, RunConfig, Target};
use crate::error::CliError;
use crate::output::{clamp_loaded, read_params, OutDir};

/// Name of the manifest written by every command.
pub const MANIFEST: &str = "manifest.jsonl";
/// Per-iteration loss records of `optimize`.
pub const LOSS_LOG: &str = "losses.jsonl";

const PROGRESS_EVERY: usize = 500;

fn meshes_of(hands: &[(Handedness, HandParams<f64>)], rigs: &[HandRig<f64>]) -> Result<Vec<handshadow_core::TriMesh64>, CliError> {
    rigs.iter()
        .zip(hands)
        .map(|(r, (_, p))| pose_mesh(r, p).map_err(|e| CliError::Numeric(e.to_string())))
        .collect()
}

/// Hard and soft silhouettes of posed hands.
pub fn render_pair(
    hands: &[(Handedness, HandParams<f64>)],
    rigs: &[HandRig<f64>],
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<(GrayImage<f64>, GrayImage<f64>), CliError> {
    let meshes = meshes_of(hands, rigs)?;
    let refs: Vec<_> = meshes.iter().collect();
    Ok((render_silhouette_hard(&refs, camera)?, render_soft_values(&refs, camera, settings)?))
}

fn labeled(handedness: &[Handedness], params: &[HandParams<f64>]) -> Vec<(Handedness, HandParams<f64>)> {
    handedness.iter().copied().zip(params.iter().cloned()).collect()
}

fn report_json(r: &LossReport) -> serde_json::Value {
    serde_json::to_value(r).expect("report serializes")
}

fn progress(label: &str) -> impl FnMut(&StepEvent<'_, f64>) + '_ {
    move |ev| {
        if ev.iteration % PROGRESS_EVERY == 0 {
            let r = &ev.record.report;
            eprintln!(
                "{label} restart {} iteration {}: total {:.6e} image {:.6e} pen {:.3e} sigma {:.1e}",
                ev.restart, ev.iteration, r.total, r.image_term, r.pen_term, ev.record.sigma
            );
        }
    }
}

fn problem<'a>(
    target: &'a GrayImage<f64>,
    rigs: &'a [HandRig<f64>],
    cfg: &'a RunConfig,
) -> Problem<'a, f64> {
    let mut p = Problem::new(target, rigs.iter().collect(), &cfg.camera, &cfg.render, &cfg.weights);
    p.norm = cfg.image_norm;
    p
}

fn run_header(command: &str, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "kind": "run",
        "command": command,
        "seed": cfg.optimizer.seed,
        "image_norm": cfg.image_norm,
        "pen_penalty": "depth_squared",
        "target_threshold": 0.5,
        "config": cfg,
    })
}

/// Fits the configured target and writes the run manifest, the loss log, snapshot
/// renders, the final meshes and the final params file.
pub fn cmd_optimize(config_path: &Path) -> Result<RunRecord<f64>, CliError> {
    let loaded = RunConfig::load(config_path)?;
    let cfg = &loaded.config;
    let spec = cfg.target.as_deref().ok_or_else(|| CliError::Config("optimize needs `target`".into()))?;
    let target = load_target(spec, &loaded.base, &cfg.camera)?;
    let handedness = cfg.handedness_list();
    let init = match &cfg.init {
        Some(p) => {
            let (hands, _) = read_params(&loaded.resolve(p))?;
            if hands.iter().map(|(h, _)| *h).collect::<Vec<_>>() != handedness {
                return Err(CliError::Config(format!("init {p}: hands do not match the configured {handedness:?}")));
            }
            Some(hands.into_iter().map(|(_, p)| p).collect())
        }
        None => None,
    };
    let rigs = make_rigs(&handedness);
    let mut out = OutDir::create(loaded.output_dir())?;
    out.record(run_header("optimize", cfg));
    let input = out.write_pgm("target_input.pgm", &target.raw)?;
    let binary = out.write_pgm("target.pgm", &target.binary)?;
    out.record(json!({"kind": "target", "source": target.source, "input": input, "binary": binary}));

    let record = optimize_observed(&problem(&target.binary, &rigs, cfg), init, &cfg.optimizer, &mut progress("optimize"))?;
    write_run(&mut out, &record, &handedness, &rigs, cfg, "")?;
    out.finish(MANIFEST)?;
    Ok(record)
}

/// Loss log, snapshots, restart summaries and final outputs of one optimizer run.
/// `prefix` namespaces the files when a command writes several runs.
fn write_run(
    out: &mut OutDir,
    record: &RunRecord<f64>,
    handedness: &[Handedness],
    rigs: &[HandRig<f64>],
    cfg: &RunConfig,
    prefix: &str,
) -> Result<(), CliError> {
    let mut log = String::new();
    for r in &record.restarts {
        for it in &r.iterations {
            let line = json!({
                "restart": r.index,
                "iteration": it.report.iteration,
                "total": it.report.total,
                "image_term": it.report.image_term,
                "pen_term": it.report.pen_term,
                "limit_term": it.report.limit_term,
                "sigma": it.sigma,
                "mean_squared": it.mean_squared,
            });
            log.push_str(&line.to_string());
            log.push('\n');
        }
    }
    out.subdir("snapshots")?;
    let log_file = out.write_text(&format!("{prefix}{LOSS_LOG}"), &log)?;
    out.record(json!({"kind": "loss_log", "file": log_file}));

    for r in &record.restarts {
        for s in &r.snapshots {
            let sigma = r.iterations.get(s.iteration).map_or(cfg.render.sigma, |it| it.sigma);
            let stem = format!("snapshots/{prefix}r{}_i{:05}", r.index, s.iteration);
            let hands = labeled(handedness, &s.params);
            let (hard, soft) = render_pair(&hands, rigs, &cfg.camera, &RenderSettings { sigma, ..cfg.render.clone() })?;
            out.record(json!({
                "kind": "snapshot",
                "restart": r.index,
                "iteration": s.iteration,
                "sigma": sigma,
                "hard": out.write_pgm(&format!("{stem}_hard.pgm"), &hard)?,
                "soft": out.write_pgm(&format!("{stem}_soft.pgm"), &soft)?,
                "params": out.write_params(&format!("{stem}.toml"), &hands)?,
            }));
        }
        out.record(json!({
            "kind": "restart",
            "index": r.index,
            "seed": r.seed,
            "iterations": r.iterations.len(),
            "status": r.status,
            "best": r.best.as_ref().map(|(_, rep)| report_json(rep)),
            "first_within_tolerance": r.first_within_tolerance,
        }));
    }

    // Final outputs come from the params exactly as written, so `render` on the
    // params file reproduces them.
    let final_hands = labeled(handedness, &record.final_params);
    let params_file = out.write_params(&format!("{prefix}params.toml"), &final_hands)?;
    let (final_hands, _) = clamp_loaded(through_params_file(&final_hands), &params_file);
    let (hard, soft) = render_pair(&final_hands, rigs, &cfg.camera, &cfg.final_settings())?;
    let hard_files = out.write_image_pair(&format!("{prefix}final_hard"), &hard)?;
    let soft_files = out.write_image_pair(&format!("{prefix}final_soft"), &soft)?;
    let meshes = out.write_meshes(&format!("{prefix}final"), &final_hands)?;
    out.record(json!({
        "kind": "result",
        "best_restart": record.best_restart,
        "converged": record.converged,
        "final_report": report_json(&record.final_report),
        "final_image_term": record.final_report.image_term,
        "params": params_file,
        "hard": hard_files,
        "soft": soft_files,
        "soft_sigma": cfg.final_sigma(),
        "meshes": meshes,
    }));
    Ok(())
}

/// Renders a params file: hard and soft silhouettes, a wall composite and the meshes.
pub fn cmd_render(params_path: &Path, config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let loaded = RunConfig::load(config_path)?;
    let cfg = &loaded.config;
    let (hands, warnings) = read_params(params_path)?;
    let handedness: Vec<Handedness> = hands.iter().map(|(h, _)| *h).collect();
    let rigs = make_rigs(&handedness);
    let (hard, soft) = render_pair(&hands, &rigs, &cfg.camera, &cfg.final_settings())?;
    let mut out = OutDir::create(out_dir.to_path_buf())?;
    out.record(run_header("render", cfg));
    let hard_files = out.write_image_pair("hard", &hard)?;
    let soft_files = out.write_image_pair("soft", &soft)?;
    let wall = out.write_png("shadow.png", &wall_composite(&hard, &cfg.viewing()))?;
    let meshes = out.write_meshes("hand", &hands)?;
    out.record(json!({
        "kind": "render",
        "source": params_path.display().to_string(),
        "warnings": warnings,
        "height": cfg.camera.height,
        "width": cfg.camera.width,
        "soft_sigma": cfg.final_sigma(),
        "hard": hard_files,
        "soft": soft_files,
        "shadow": wall,
        "meshes": meshes,
    }));
    out.finish(MANIFEST)?;
    Ok(())
}

/// One end of a transition, given as a params file or a target image.
enum Endpoint {
    Params { source: String, hands: Vec<(Handedness, HandParams<f64>)>, warnings: Vec<String> },
    Image(Target),
}

fn is_params_path(spec: &str) -> bool {
    Path::new(spec).extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

fn read_endpoint(spec: &str, camera: &Camera) -> Result<Endpoint, CliError> {
    if is_params_path(spec) {
        let (hands, warnings) = read_params(Path::new(spec))?;
        Ok(Endpoint::Params { source: spec.to_string(), hands, warnings })
    } else {
        Ok(Endpoint::Image(load_target(spec, Path::new(""), camera)?))
    }
}

pub struct InterpolateArgs {
    pub a: String,
    pub b: String,
    pub frames: usize,
    pub refine: bool,
    pub refine_iterations: usize,
    pub config: PathBuf,
}

/// Fits or loads both endpoints, then writes `frames + 1` frames with one OBJ per hand
/// each, the endpoint params and a sequence manifest.
pub fn cmd_interpolate(args: &InterpolateArgs) -> Result<(), CliError> {
    let loaded: Loaded = RunConfig::load(&args.config)?;
    let cfg = &loaded.config;
    if args.frames == 0 {
        return Err(CliError::Config("-T must be at least 1".into()));
    }
    let a = read_endpoint(&args.a, &cfg.camera)?;
    let b = read_endpoint(&args.b, &cfg.camera)?;
    let handedness = match (&a, &b) {
        (Endpoint::Params { hands: ha, .. }, Endpoint::Params { hands: hb, .. }) => {
            let la: Vec<_> = ha.iter().map(|(h, _)| *h).collect();
            let lb: Vec<_> = hb.iter().map(|(h, _)| *h).collect();
            if la != lb {
                return Err(CliError::Config(format!("endpoint hands differ: {la:?} vs {lb:?}")));
            }
            la
        }
        (Endpoint::Params { hands, .. }, _) | (_, Endpoint::Params { hands, .. }) => hands.iter().map(|(h, _)| *h).collect(),
        _ => cfg.handedness_list(),
    };
    let rigs = make_rigs(&handedness);
    let mut out = OutDir::create(loaded.output_dir())?;
    out.subdir("frames")?;
    let mut header = run_header("interpolate", cfg);
    header["frames"] = json!(args.frames + 1);
    header["refine"] = json!(args.refine);
    header["refine_iterations"] = json!(args.refine_iterations);
    out.record(header);

    let (continuation, warm_settings) = warm_start(&cfg.optimizer, &cfg.render);
    let warm_problem = |target| Problem { settings: &warm_settings, ..problem(target, &rigs, cfg) };
    let params_of = |e: &Endpoint| match e {
        Endpoint::Params { hands, .. } => Some(hands.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>()),
        Endpoint::Image(_) => None,
    };
    let (pa, pb, run_a, run_b) = match (&a, &b) {
        (Endpoint::Image(ta), Endpoint::Image(tb)) => {
            let (ra, rb) = optimize_pair(&problem(&ta.binary, &rigs, cfg), &tb.binary, None, &cfg.optimizer)?;
            (ra.final_params.clone(), rb.final_params.clone(), Some(ra), Some(rb))
        }
        (Endpoint::Image(ta), Endpoint::Params { .. }) => {
            let pb = params_of(&b).expect("params endpoint");
            let ra = optimize_observed(&warm_problem(&ta.binary), Some(pb.clone()), &continuation, &mut progress("a"))?;
            (ra.final_params.clone(), pb, Some(ra), None)
        }
        (Endpoint::Params { .. }, Endpoint::Image(tb)) => {
            let pa = params_of(&a).expect("params endpoint");
            let rb = optimize_observed(&warm_problem(&tb.binary), Some(pa.clone()), &continuation, &mut progress("b"))?;
            (pa, rb.final_params.clone(), None, Some(rb))
        }
        (Endpoint::Params { .. }, Endpoint::Params { .. }) => {
            (params_of(&a).expect("params endpoint"), params_of(&b).expect("params endpoint"), None, None)
        }
    };

    // Refinement targets: the binarized image, or the hard render of a params endpoint.
    let target_of = |e: &Endpoint, p: &[HandParams<f64>]| -> Result<GrayImage<f64>, CliError> {
        match e {
            Endpoint::Image(t) => Ok(t.binary.clone()),
            Endpoint::Params { .. } => Ok(render_pair(&labeled(&handedness, p), &rigs, &cfg.camera, &cfg.render)?.0),
        }
    };
    let target_a = target_of(&a, &pa)?;
    let target_b = target_of(&b, &pb)?;
    for (name, e, params, run, tgt) in [("a", &a, &pa, &run_a, &target_a), ("b", &b, &pb, &run_b, &target_b)] {
        let hands = labeled(&handedness, params);
        let mut line = match e {
            Endpoint::Params { source, warnings, .. } => {
                json!({"kind": "endpoint", "name": name, "mode": "params", "source": source, "warnings": warnings})
            }
            Endpoint::Image(t) => json!({"kind": "endpoint", "name": name, "mode": "image", "source": t.source}),
        };
        line["target"] = json!(out.write_pgm(&format!("target_{name}.pgm"), tgt)?);
        line["params"] = json!(out.write_params(&format!("{name}.toml"), &hands)?);
        out.record(line);
        if let Some(r) = run {
            write_run(&mut out, r, &handedness, &rigs, cfg, &format!("{name}_"))?;
        }
    }

    let rig_refs: Vec<&HandRig<f64>> = rigs.iter().collect();
    let refine = RefineSpec {
        target_a: &target_a,
        target_b: &target_b,
        camera: &cfg.camera,
        settings: &cfg.render,
        weights: &cfg.weights,
        config: &cfg.optimizer,
        iterations: args.refine_iterations,
    };
    let seq = interpolate(&pa, &pb, &rig_refs, args.frames, args.refine.then_some(&refine))?;
    for (frame, rec) in seq.frames.iter().zip(&seq.records) {
        let hands = labeled(&handedness, frame);
        let stem = format!("frames/frame_{:04}", rec.index);
        let (hard, _) = render_pair(&hands, &rigs, &cfg.camera, &cfg.render)?;
        let images = out.write_image_pair(&stem, &hard)?;
        let meshes = out.write_meshes(&stem, &hands)?;
        let params = out.write_params(&format!("{stem}.toml"), &hands)?;
        let pairs: Vec<_> = rigs.iter().zip(frame).collect();
        let pen = scene_penetration(&pairs).map_err(|e| CliError::Numeric(e.to_string()))?;
        let within = rigs.iter().zip(frame).all(|(r, p)| p.within_limits(&r.limits));
        out.record(json!({
            "kind": "frame",
            "index": rec.index,
            "alpha": rec.alpha,
            "refined": rec.refined,
            "report": rec.report.as_ref().map(report_json),
            "penetration": pen,
            "within_limits": within,
            "images": images,
            "meshes": meshes,
            "params": params,
        }));
    }
    out.finish(MANIFEST)?;
    Ok(())
}

/// Writes every bundled target at `size` x `size` as `<out>/<name>.pgm`.
pub fn cmd_targets(out: &Path, size: usize) -> Result<Vec<PathBuf>, CliError> {
    if size == 0 {
        return Err(CliError::Config("size must be positive".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    for name in BUNDLED_NAMES {
        let img = bundled::<f64>(name, size, size).expect("bundled name");
        let path = out.join(format!("{name}.pgm"));
        img.write_pgm(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs the finite-difference suite and prints one line per stage.
pub fn cmd_gradcheck(seed: u64, inject_fault: bool) -> Result<GradcheckReport, CliError> {
    let report = run_gradcheck(seed, inject_fault);
    println!("gradcheck seed {seed}");
    for s in &report.stages {
        println!(
            "{:<11} worst rel err {:.3e} (threshold {:.0e}, {} checks, worst at {}) {}",
            s.name,
            s.worst_rel_error,
            s.threshold,
            s.checks,
            s.worst_param,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(report)
    } else {
        let names: Vec<String> =
            report.failures().map(|s| format!("stage {} at {} (rel err {:.3e})", s.name, s.worst_param, s.worst_rel_error)).collect();
        Err(CliError::Gradcheck(names.join("; ")))
    }
}
