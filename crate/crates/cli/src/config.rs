//! Run configuration: one TOML file per run. Every table is optional and falls back
//! to library defaults; unknown keys are rejected.
//!
//! ```toml
//! target = "bundled:disc"       # or a PGM/PNG path, relative to this file
//! init = "start.toml"          # optional params file for the first restart
//! hands = 1                     # 1 or 2; two hands are always [left, right]
//! handedness = "right"          # which hand when hands = 1
//! seed = 7
//! output_dir = "out"
//! image_norm = "root"           # root | mean_squared | sum_squared
//!
//! [camera]
//! height = 128
//! width = 128
//!
//! [render]
//! sigma = 1e-4
//!
//! [optimizer]
//! iterations = 2000
//! restarts = 3
//!
//! [weights]
//! w_pen = 1e5
//! ```

use std::path::{Path, PathBuf};

use handshadow_core::hand_rig::{make_procedural_hand, HandRig, Handedness};
use handshadow_core::losses::{ImageNorm, LossWeights};
use handshadow_core::optimizer::OptimConfig;
use handshadow_core::renderer::{Camera, GrayImage, RenderSettings, ViewingConfig};
use handshadow_core::targets;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Prefix selecting a built-in target instead of a file.
pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target silhouette for `optimize`.
    pub target: Option<String>,
    /// Params file used as the first restart's start instead of a random draw.
    pub init: Option<String>,
    pub hands: usize,
    pub handedness: Handedness,
    /// Overrides `optimizer.seed` when present.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub image_norm: ImageNorm,
    /// Light direction for the wall composite export.
    pub light: Option<[f64; 3]>,
    pub camera: Camera,
    pub render: RenderSettings,
    pub optimizer: OptimConfig,
    pub weights: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            target: None,
            init: None,
            hands: 2,
            handedness: Handedness::Right,
            seed: None,
            output_dir: PathBuf::from("out"),
            image_norm: ImageNorm::default(),
            light: None,
            camera: Camera::default(),
            render: RenderSettings::default(),
            optimizer: OptimConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

/// A validated config plus the directory its relative paths are resolved against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            if cfg.optimizer.seed != 0 && cfg.optimizer.seed != seed {
                return Err(CliError::Config(format!(
                    "seed = {seed} conflicts with optimizer.seed = {}",
                    cfg.optimizer.seed
                )));
            }
            cfg.optimizer.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, base })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |section: &str, m: String| CliError::Config(format!("[{section}] {m}"));
        if !(1..=2).contains(&self.hands) {
            return Err(CliError::Config(format!("hands must be 1 or 2, got {}", self.hands)));
        }
        self.camera.validate().map_err(|e| field("camera", e.to_string()))?;
        self.render.validate().map_err(|e| field("render", e.to_string()))?;
        self.optimizer.validate().map_err(|e| field("optimizer", e.to_string()))?;
        self.weights.validate().map_err(|e| field("weights", e.to_string()))?;
        if let Some(l) = self.light {
            if l.iter().any(|v| !v.is_finite()) || l.iter().all(|&v| v == 0.0) {
                return Err(CliError::Config(format!("light must be a finite non-zero direction, got {l:?}")));
            }
        }
        Ok(())
    }

    /// Hand order used by every command: `[left, right]`, or the configured single hand.
    pub fn handedness_list(&self) -> Vec<Handedness> {
        if self.hands == 2 {
            vec![Handedness::Left, Handedness::Right]
        } else {
            vec![self.handedness]
        }
    }

    /// Sigma of the last optimizer iteration; exported soft renders use it.
    pub fn final_sigma(&self) -> f64 {
        self.optimizer.sigma_at(self.optimizer.iterations, self.render.sigma)
    }

    pub fn final_settings(&self) -> RenderSettings {
        RenderSettings { sigma: self.final_sigma(), ..self.render.clone() }
    }

    pub fn viewing(&self) -> ViewingConfig {
        ViewingConfig { camera: self.camera.clone(), light: self.light }
    }
}

impl Loaded {
    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let p = path.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

/// A target image as read and its binarized form.
#[derive(Clone, Debug)]
pub struct Target {
    pub source: String,
    pub raw: GrayImage<f64>,
    pub binary: GrayImage<f64>,
}

/// Reads `spec` (a path relative to `base`, or `bundled:<name>`) at the camera
/// resolution, thresholded at 0.5.
pub fn load_target(spec: &str, base: &Path, camera: &Camera) -> Result<Target, CliError> {
    let raw = if let Some(name) = spec.strip_prefix(BUNDLED_PREFIX) {
        targets::bundled::<f64>(name, camera.height, camera.width).ok_or_else(|| {
            CliError::Config(format!("unknown bundled target {name:?}; known: {}", targets::BUNDLED_NAMES.join(", ")))
        })?
    } else {
        let path = base.join(spec);
        let img = GrayImage::<f64>::read(&path)?;
        if img.height() != camera.height || img.width() != camera.width {
            return Err(CliError::Config(format!(
                "{}: image is {}x{} but the camera renders {}x{}",
                path.display(),
                img.height(),
                img.width(),
                camera.height,
                camera.width
            )));
        }
        img
    };
    let binary = raw.threshold();
    Ok(Target { source: spec.to_string(), raw, binary })
}

pub fn make_rigs(hands: &[Handedness]) -> Vec<HandRig<f64>> {
    hands.iter().map(|&h| make_procedural_hand(h)).collect()
}
