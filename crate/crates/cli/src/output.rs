//! File output shared by the commands. Manifests are JSON lines with no clock or host
//! data, so identical runs write identical bytes.

use std::path::{Path, PathBuf};

use handshadow_core::geometry::write_obj;
use handshadow_core::hand_rig::{
    clamp_pose, make_procedural_hand, params_to_string, parse_params, pose_mesh, HandParams, Handedness,
};
use handshadow_core::renderer::GrayImage;
use serde_json::Value;

use crate::error::CliError;

pub type Hands = Vec<(Handedness, HandParams<f64>)>;

/// Output directory plus the manifest lines collected so far.
pub struct OutDir {
    pub root: PathBuf,
    lines: Vec<String>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root, lines: Vec::new() })
    }

    pub fn subdir(&self, name: &str) -> Result<(), CliError> {
        let p = self.root.join(name);
        std::fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn record(&mut self, line: Value) {
        self.lines.push(line.to_string());
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<String, CliError> {
        let p = self.root.join(rel);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(rel.to_string())
    }

    pub fn write_pgm(&self, rel: &str, img: &GrayImage<f64>) -> Result<String, CliError> {
        img.write_pgm(self.root.join(rel))?;
        Ok(rel.to_string())
    }

    pub fn write_png(&self, rel: &str, img: &GrayImage<f64>) -> Result<String, CliError> {
        img.write_png(self.root.join(rel))?;
        Ok(rel.to_string())
    }

    /// Writes `<stem>.pgm` and `<stem>.png`.
    pub fn write_image_pair(&self, stem: &str, img: &GrayImage<f64>) -> Result<[String; 2], CliError> {
        Ok([self.write_pgm(&format!("{stem}.pgm"), img)?, self.write_png(&format!("{stem}.png"), img)?])
    }

    /// One OBJ per hand, `<stem>_<left|right>.obj`.
    pub fn write_meshes(&self, stem: &str, hands: &[(Handedness, HandParams<f64>)]) -> Result<Vec<String>, CliError> {
        let mut out = Vec::with_capacity(hands.len());
        for (h, p) in hands {
            let rel = format!("{stem}_{}.obj", h.name());
            let mesh = pose_mesh(&make_procedural_hand::<f64>(*h), p).map_err(|e| CliError::Numeric(e.to_string()))?;
            write_obj(&mesh, self.root.join(&rel))?;
            out.push(rel);
        }
        Ok(out)
    }

    pub fn write_params(&self, rel: &str, hands: &[(Handedness, HandParams<f64>)]) -> Result<String, CliError> {
        self.write_text(rel, &params_to_string(hands))
    }

    /// Writes the collected lines to `rel`, one JSON object per line.
    pub fn finish(self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join(rel);
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}

/// Reads a params file and projects every hand onto its joint limits. Each clamped
/// hand produces a warning on stderr and in the returned list.
pub fn read_params(path: &Path) -> Result<(Hands, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let hands = parse_params::<f64>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if hands.is_empty() || hands.len() > 2 {
        return Err(CliError::Config(format!("{}: expected 1 or 2 hands, found {}", path.display(), hands.len())));
    }
    Ok(clamp_loaded(hands, &path.display().to_string()))
}

pub fn clamp_loaded(hands: Hands, source: &str) -> (Hands, Vec<String>) {
    let mut warnings = Vec::new();
    let hands = hands
        .into_iter()
        .enumerate()
        .map(|(i, (h, p))| {
            let limits = handshadow_core::hand_rig::default_limits::<f64>(h);
            if p.within_limits(&limits) {
                (h, p)
            } else {
                let w = format!("{source}: hand {i} ({}) exceeds its joint limits; clamped", h.name());
                eprintln!("warning: {w}");
                warnings.push(w);
                (h, clamp_pose(&p, &limits))
            }
        })
        .collect();
    (hands, warnings)
}
