//! Calibration run configuration (`pipeline.toml`).

use std::path::{Path, PathBuf};

use calibcube_core::pipeline::PipelineParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input files. Relative paths are resolved against the directory of the
/// config file. Exactly one of `image` and `detections` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub events: PathBuf,
    pub cloud: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    pub event_intrinsics: PathBuf,
    pub rgb_intrinsics: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives RANSAC sampling and is recorded in every output.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inputs: InputPaths,
    pub params: PipelineParams,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "config file {} not found",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_relative_to(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes to TOML")
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.events,
            &mut i.cloud,
            &mut i.event_intrinsics,
            &mut i.rgb_intrinsics,
            &mut i.target,
        ] {
            fix(p);
        }
        i.image.as_mut().map(fix);
        i.detections.as_mut().map(fix);
        fix(&mut self.output_dir);
    }

    /// Every referenced input exists and the RGB source is unambiguous.
    /// Errors name the offending key.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        let i = &self.inputs;
        match (&i.image, &i.detections) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "inputs.image and inputs.detections are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "one of inputs.image or inputs.detections is required".into(),
                ))
            }
            _ => {}
        }
        let mut files = vec![
            ("inputs.events", &i.events),
            ("inputs.cloud", &i.cloud),
            ("inputs.event_intrinsics", &i.event_intrinsics),
            ("inputs.rgb_intrinsics", &i.rgb_intrinsics),
            ("inputs.target", &i.target),
        ];
        if let Some(p) = &i.image {
            files.push(("inputs.image", p));
        }
        if let Some(p) = &i.detections {
            files.push(("inputs.detections", p));
        }
        for (key, path) in files {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "{key}: file {} not found",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
