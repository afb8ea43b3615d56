//! The three feature branches and both PnP solves on in-memory inputs.
//!
//! Branches are independent: a failing branch only removes the calibration
//! that needs it. The LiDAR branch feeds both calibrations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{
    detect_led_keypoints, Event, EventDetection, EventError, FrequencyConfig, FrequencyTolerance,
};
use crate::geometry::{CameraIntrinsics, Point2};
use crate::lidar::{detect_cube, CubeDetection, LidarError, PointCloud, RansacParams, Roi};
use crate::pnp::{calibrate_event_lidar, calibrate_rgb_lidar, Calibration, PnpError, PnpOptions};
use crate::rgb::{
    detect_markers, match_to_target, DetectorParams, GrayImage, MarkerDetection, RgbError,
};
use crate::sim::SceneConfig;
use crate::target::{build_geometry, TargetError, TargetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    #[serde(default)]
    pub frequency: FrequencyConfig,
    #[serde(default)]
    pub tolerance: FrequencyTolerance,
    #[serde(default)]
    pub ransac: RansacParams,
    pub roi: Roi,
    #[serde(default)]
    pub detector: DetectorParams,
    #[serde(default)]
    pub pnp: PnpOptions,
}

impl PipelineParams {
    pub fn with_roi(roi: Roi) -> Self {
        Self {
            frequency: FrequencyConfig::default(),
            tolerance: FrequencyTolerance::default(),
            ransac: RansacParams::default(),
            roi,
            detector: DetectorParams::default(),
            pnp: PnpOptions::default(),
        }
    }

    /// Defaults for a simulated scene: ROI padded 0.3 m around the target and
    /// a RANSAC inlier band of at least 3σ of the LiDAR range noise.
    pub fn for_scene(cfg: &SceneConfig) -> Self {
        let mut params = Self::with_roi(cfg.suggested_roi(0.3));
        params.ransac.inlier_threshold_m = params
            .ransac
            .inlier_threshold_m
            .max(3.0 * cfg.lidar_noise_sigma_m);
        params.ransac.seed = cfg.seed;
        params
    }
}

#[derive(Debug, Clone)]
pub enum RgbInput {
    Image(GrayImage),
    Detections(Vec<MarkerDetection>),
}

pub struct PipelineInputs<'a> {
    pub events: &'a [Event],
    pub event_intrinsics: &'a CameraIntrinsics,
    pub cloud: &'a PointCloud,
    pub rgb: &'a RgbInput,
    pub rgb_intrinsics: &'a CameraIntrinsics,
    pub target: &'a TargetSpec,
}

#[derive(Debug, Error)]
pub enum BranchError {
    #[error("event branch: {0}")]
    Event(#[from] EventError),
    #[error("lidar branch: {0}")]
    Lidar(#[from] LidarError),
    #[error("rgb branch: {0}")]
    Rgb(#[from] RgbError),
    #[error("{kind} calibration: {source}")]
    Pnp {
        kind: &'static str,
        #[source]
        source: PnpError,
    },
    #[error("{0} calibration skipped: a required branch failed")]
    Skipped(&'static str),
    #[error("target: {0}")]
    Target(#[from] TargetError),
}

#[derive(Debug, Clone)]
pub struct RgbDetection {
    pub markers: Vec<MarkerDetection>,
    /// `(A index, pixel)`, sorted by index.
    pub corners: Vec<(usize, Point2)>,
    pub from_image: bool,
}

pub struct PipelineOutcome {
    pub event: Result<EventDetection, BranchError>,
    pub lidar: Result<CubeDetection, BranchError>,
    pub rgb: Result<RgbDetection, BranchError>,
    pub event_lidar: Result<Calibration, BranchError>,
    pub rgb_lidar: Result<Calibration, BranchError>,
}

impl PipelineOutcome {
    pub fn all_ok(&self) -> bool {
        self.event.is_ok()
            && self.lidar.is_ok()
            && self.rgb.is_ok()
            && self.event_lidar.is_ok()
            && self.rgb_lidar.is_ok()
    }

    /// Messages of every failed step, in pipeline order.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |e: Option<&BranchError>| {
            if let Some(e) = e {
                out.push(e.to_string());
            }
        };
        push(self.event.as_ref().err());
        push(self.lidar.as_ref().err());
        push(self.rgb.as_ref().err());
        push(self.event_lidar.as_ref().err());
        push(self.rgb_lidar.as_ref().err());
        out
    }
}

pub fn run_event_branch(
    events: &[Event],
    k: &CameraIntrinsics,
    spec: &TargetSpec,
    params: &PipelineParams,
) -> Result<EventDetection, BranchError> {
    Ok(detect_led_keypoints(
        events,
        k.width,
        k.height,
        &params.frequency,
        spec,
        &params.tolerance,
    )?)
}

pub fn run_lidar_branch(
    cloud: &PointCloud,
    spec: &TargetSpec,
    params: &PipelineParams,
) -> Result<CubeDetection, BranchError> {
    let geometry = build_geometry(spec)?;
    Ok(detect_cube(cloud, &params.roi, &params.ransac, &geometry)?)
}

pub fn run_rgb_branch(
    input: &RgbInput,
    spec: &TargetSpec,
    params: &PipelineParams,
) -> Result<RgbDetection, BranchError> {
    let dict = spec.dictionary().ok_or_else(|| {
        TargetError::InvalidSpec(format!("unknown dictionary {}", spec.dictionary))
    })?;
    let (markers, from_image) = match input {
        RgbInput::Image(img) => {
            // only IDs on the target count; anything else is a stray marker
            let found = detect_markers(img, dict, &params.detector);
            (
                found
                    .into_iter()
                    .filter(|d| spec.marker_slot(d.id).is_some())
                    .collect(),
                true,
            )
        }
        RgbInput::Detections(d) => (d.clone(), false),
    };
    let corners = match_to_target(&markers, spec)?;
    Ok(RgbDetection {
        markers,
        corners,
        from_image,
    })
}

/// Runs all branches (concurrently) and both calibrations.
pub fn run(inputs: &PipelineInputs, params: &PipelineParams) -> PipelineOutcome {
    let (event, (lidar, rgb)) = rayon::join(
        || {
            run_event_branch(
                inputs.events,
                inputs.event_intrinsics,
                inputs.target,
                params,
            )
        },
        || {
            rayon::join(
                || run_lidar_branch(inputs.cloud, inputs.target, params),
                || run_rgb_branch(inputs.rgb, inputs.target, params),
            )
        },
    );
    let event_lidar = match (&event, &lidar) {
        (Ok(ev), Ok(cube)) => calibrate_event_lidar(
            &cube.corners,
            &ev.keypoints,
            inputs.event_intrinsics,
            &params.pnp,
        )
        .map_err(|source| BranchError::Pnp {
            kind: "event-lidar",
            source,
        }),
        _ => Err(BranchError::Skipped("event-lidar")),
    };
    let rgb_lidar = match (&rgb, &lidar) {
        (Ok(r), Ok(cube)) => calibrate_rgb_lidar(
            &cube.aruco_corners,
            &r.corners,
            inputs.rgb_intrinsics,
            &params.pnp,
        )
        .map_err(|source| BranchError::Pnp {
            kind: "rgb-lidar",
            source,
        }),
        _ => Err(BranchError::Skipped("rgb-lidar")),
    };
    PipelineOutcome {
        event,
        lidar,
        rgb,
        event_lidar,
        rgb_lidar,
    }
}
