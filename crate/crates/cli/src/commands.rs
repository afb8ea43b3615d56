//! The four subcommands. Each returns a typed result; the binary maps
//! errors to exit codes via [`CliError::exit_code`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calibcube_core::events::{BoundingBox, Event};
use calibcube_core::geometry::project;
use calibcube_core::io::{self, CalibrationRecord, IoError};
use calibcube_core::lidar::PointCloud;
use calibcube_core::pipeline::{self, PipelineInputs, PipelineOutcome, PipelineParams, RgbInput};
use calibcube_core::pnp::{Calibration, Initialization};
use calibcube_core::rgb::{parse_external_detections, GrayImage, RgbError};
use calibcube_core::sim::{self, GroundTruth, Manifest, SceneConfig, SimError};
use calibcube_core::{CameraIntrinsics, Point3, Pose, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::config::{InputPaths, PipelineConfig};
use crate::overlay::{event_frame, project_cloud, render_svg};
use crate::CliError;

pub const PIPELINE_FILE: &str = "pipeline.toml";
pub const EVENT_LIDAR_FILE: &str = "event_lidar.json";
pub const RGB_LIDAR_FILE: &str = "rgb_lidar.json";
pub const REPORT_FILE: &str = "report.json";
pub const EVENT_OVERLAY_FILE: &str = "event_lidar.svg";
pub const RGB_OVERLAY_FILE: &str = "rgb_lidar.svg";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    io::write_bytes(path, bytes).map_err(CliError::from)
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

// ---- simulate ----

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Simulates a scene into `out_dir` and writes a `pipeline.toml` that
/// calibrates it. Without a config the default rig is used.
pub fn cmd_simulate(
    config: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<Manifest, CliError> {
    let mut cfg = match config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "config file {} not found",
                    path.display()
                )));
            }
            io::read_toml::<SceneConfig>(path)?
        }
        None => SceneConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let manifest = sim::write_scene(&cfg, out_dir)?;
    let pipeline = PipelineConfig {
        seed: cfg.seed,
        output_dir: "calibration".into(),
        inputs: InputPaths {
            events: sim::EVENTS_FILE.into(),
            cloud: sim::CLOUD_FILE.into(),
            image: Some(sim::IMAGE_FILE.into()),
            detections: None,
            event_intrinsics: sim::EVENT_INTRINSICS_FILE.into(),
            rgb_intrinsics: sim::RGB_INTRINSICS_FILE.into(),
            target: sim::TARGET_FILE.into(),
        },
        params: PipelineParams::for_scene(&cfg),
    };
    write(&out_dir.join(PIPELINE_FILE), pipeline.to_toml().as_bytes())?;
    Ok(manifest)
}

// ---- calibrate ----

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchReport<T> {
    Ok(T),
    Failed { error: String },
}

impl<T> BranchReport<T> {
    fn from_result<U, E: ToString>(r: &Result<U, E>, f: impl FnOnce(&U) -> T) -> Self {
        match r {
            Ok(v) => BranchReport::Ok(f(v)),
            Err(e) => BranchReport::Failed {
                error: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedDiagnostics {
    pub corner_index: usize,
    pub center_px: [f64; 2],
    pub frequency_hz: f64,
    pub pixel_count: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventDiagnostics {
    /// `[start_us, end_us)` of every segment.
    pub segments: Vec<[u64; 2]>,
    pub bboxes: Vec<Option<BoundingBox>>,
    pub selected_map_index: usize,
    pub selected_bbox: BoundingBox,
    pub surviving_maps: Vec<usize>,
    pub leds: Vec<LedDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneDiagnostics {
    /// Target face: 0 is `z = 0`, 1 is `x = 0`, 2 is `y = 0`.
    pub face: usize,
    /// Index of the RANSAC round that produced the plane.
    pub ransac_round: usize,
    pub normal: [f64; 3],
    pub offset_m: f64,
    pub inlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LidarDiagnostics {
    pub planes: Vec<PlaneDiagnostics>,
    pub e0_m: [f64; 3],
    pub target_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RgbDiagnostics {
    /// `image` or `detections`.
    pub source: String,
    pub marker_ids: Vec<u16>,
    pub corner_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub file: String,
    pub mean_px: f64,
    pub max_px: f64,
    pub points: usize,
    pub initialization: Initialization,
    pub iterations: usize,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_digest: String,
    pub seed: u64,
    pub event: BranchReport<EventDiagnostics>,
    pub lidar: BranchReport<LidarDiagnostics>,
    pub rgb: BranchReport<RgbDiagnostics>,
    /// Keyed by `event-lidar` / `rgb-lidar`.
    pub calibrations: BTreeMap<String, BranchReport<CalibrationSummary>>,
}

#[derive(Debug)]
pub struct CalibrateOutput {
    pub output_dir: PathBuf,
    pub written: Vec<PathBuf>,
    pub report: RunReport,
}

struct LoadedInputs {
    events: Vec<Event>,
    cloud: PointCloud,
    rgb: RgbInput,
    event_k: CameraIntrinsics,
    rgb_k: CameraIntrinsics,
    target: TargetSpec,
    digest: String,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    seed: u64,
    params: &'a PipelineParams,
    /// Input key to SHA-256 of the file contents.
    inputs: BTreeMap<&'static str, String>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<LoadedInputs, CliError> {
    let i = &cfg.inputs;
    let mut hashes = BTreeMap::new();
    let mut load = |key: &'static str, path: &Path| -> Result<Vec<u8>, CliError> {
        let bytes = read(path)?;
        hashes.insert(key, io::sha256_hex(&bytes));
        Ok(bytes)
    };
    load("events", &i.events)?;
    load("cloud", &i.cloud)?;
    load("event_intrinsics", &i.event_intrinsics)?;
    load("rgb_intrinsics", &i.rgb_intrinsics)?;
    load("target", &i.target)?;
    let target = io::read_target(&i.target)?;
    let dict = target.dictionary().ok_or_else(|| {
        CliError::Config(format!(
            "inputs.target: unknown dictionary {}",
            target.dictionary
        ))
    })?;
    let rgb = match (&i.image, &i.detections) {
        (Some(path), _) => {
            load("image", path)?;
            RgbInput::Image(io::read_image(path)?)
        }
        (None, Some(path)) => {
            let bytes = load("detections", path)?;
            let text = String::from_utf8(bytes).map_err(|e| {
                CliError::Config(format!("inputs.detections: {}: {e}", path.display()))
            })?;
            let dets = parse_external_detections(&text, dict).map_err(|e| match e {
                RgbError::Io(e) => io_err(path, e),
                other => {
                    CliError::Config(format!("inputs.detections: {}: {other}", path.display()))
                }
            })?;
            RgbInput::Detections(dets)
        }
        (None, None) => unreachable!("checked by check_inputs"),
    };
    let digest = io::config_digest(&DigestInput {
        seed: cfg.seed,
        params: &cfg.params,
        inputs: hashes,
    });
    Ok(LoadedInputs {
        events: io::read_events(&i.events)?,
        cloud: io::read_cloud(&i.cloud)?,
        rgb,
        event_k: io::read_intrinsics(&i.event_intrinsics)?,
        rgb_k: io::read_intrinsics(&i.rgb_intrinsics)?,
        target,
        digest,
    })
}

fn summarize(outcome: &PipelineOutcome, digest: &str, seed: u64) -> RunReport {
    let event = BranchReport::from_result(&outcome.event, |d| EventDiagnostics {
        segments: d.segments.iter().map(|&(a, b)| [a, b]).collect(),
        bboxes: d.bboxes.clone(),
        selected_map_index: d.selection.index,
        selected_bbox: d.selection.bbox,
        surviving_maps: d.selection.survivors.clone(),
        leds: d
            .keypoints
            .iter()
            .map(|k| LedDiagnostics {
                corner_index: k.corner_index,
                center_px: k.center,
                frequency_hz: k.frequency,
                pixel_count: k.pixel_count,
                degraded: k.degraded,
            })
            .collect(),
    });
    let lidar = BranchReport::from_result(&outcome.lidar, |c| LidarDiagnostics {
        planes: (0..c.planes.len())
            .map(|f| PlaneDiagnostics {
                face: f,
                ransac_round: c.face_assignment[f],
                normal: c.planes[f].normal.into_inner().into(),
                offset_m: c.planes[f].offset,
                inlier_count: c.inlier_counts[f],
            })
            .collect(),
        e0_m: c.corners[0].coords.into(),
        target_pose: c.target_pose,
    });
    let rgb = BranchReport::from_result(&outcome.rgb, |r| RgbDiagnostics {
        source: if r.from_image { "image" } else { "detections" }.to_string(),
        marker_ids: {
            let mut ids: Vec<u16> = r.markers.iter().map(|m| m.id).collect();
            ids.sort_unstable();
            ids
        },
        corner_count: r.corners.len(),
    });
    let summary = |file: &str| {
        let file = file.to_string();
        move |c: &Calibration| CalibrationSummary {
            file,
            mean_px: c.stats.mean_px,
            max_px: c.stats.max_px,
            points: c.stats.n,
            initialization: c.solution.initialization,
            iterations: c.solution.iterations,
            final_cost: c.solution.final_cost,
        }
    };
    let mut calibrations = BTreeMap::new();
    calibrations.insert(
        "event-lidar".to_string(),
        BranchReport::from_result(&outcome.event_lidar, summary(EVENT_LIDAR_FILE)),
    );
    calibrations.insert(
        "rgb-lidar".to_string(),
        BranchReport::from_result(&outcome.rgb_lidar, summary(RGB_LIDAR_FILE)),
    );
    RunReport {
        config_digest: digest.to_string(),
        seed,
        event,
        lidar,
        rgb,
        calibrations,
    }
}

fn remove_stale(path: &Path) -> Result<(), CliError> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Runs the full pipeline from a `pipeline.toml`. `out_dir` and `seed`
/// override the config. Outputs of succeeded steps are written even when
/// another branch fails; the error then lists every failure.
pub fn cmd_calibrate(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> Result<CalibrateOutput, CliError> {
    let mut cfg = PipelineConfig::load(config_path)?;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.check_inputs()?;
    let inputs = load_inputs(&cfg)?;
    let mut params = cfg.params.clone();
    params.ransac.seed = cfg.seed;

    let outcome = pipeline::run(
        &PipelineInputs {
            events: &inputs.events,
            event_intrinsics: &inputs.event_k,
            cloud: &inputs.cloud,
            rgb: &inputs.rgb,
            rgb_intrinsics: &inputs.rgb_k,
            target: &inputs.target,
        },
        &params,
    );

    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(name);
        write(&path, bytes)?;
        written.push(path);
        Ok(())
    };

    match &outcome.event_lidar {
        Ok(cal) => {
            let record = CalibrationRecord::new(cal, &inputs.digest, cfg.seed);
            emit(EVENT_LIDAR_FILE, io::to_json(&record).as_bytes())?;
            // event frame at the start of the selected segment
            let t0 = outcome
                .event
                .as_ref()
                .map(|d| d.segments[d.selection.index].0)
                .unwrap_or(0);
            let frame = event_frame(
                &inputs.events,
                inputs.event_k.width,
                inputs.event_k.height,
                t0,
            );
            let points = project_cloud(&inputs.cloud, &cal.extrinsics.pose, &inputs.event_k);
            let svg = render_svg(
                &frame,
                &points,
                "lidar -> event_camera",
                &inputs.digest,
                cfg.seed,
            );
            emit(EVENT_OVERLAY_FILE, svg.as_bytes())?;
        }
        Err(_) => {
            remove_stale(&dir.join(EVENT_LIDAR_FILE))?;
            remove_stale(&dir.join(EVENT_OVERLAY_FILE))?;
        }
    }
    match &outcome.rgb_lidar {
        Ok(cal) => {
            let record = CalibrationRecord::new(cal, &inputs.digest, cfg.seed);
            emit(RGB_LIDAR_FILE, io::to_json(&record).as_bytes())?;
            let raster = match &inputs.rgb {
                RgbInput::Image(img) => img.clone(),
                RgbInput::Detections(_) => {
                    GrayImage::new(inputs.rgb_k.width, inputs.rgb_k.height, 255)
                }
            };
            let points = project_cloud(&inputs.cloud, &cal.extrinsics.pose, &inputs.rgb_k);
            let svg = render_svg(
                &raster,
                &points,
                "lidar -> rgb_camera",
                &inputs.digest,
                cfg.seed,
            );
            emit(RGB_OVERLAY_FILE, svg.as_bytes())?;
        }
        Err(_) => {
            remove_stale(&dir.join(RGB_LIDAR_FILE))?;
            remove_stale(&dir.join(RGB_OVERLAY_FILE))?;
        }
    }
    let report = summarize(&outcome, &inputs.digest, cfg.seed);
    emit(REPORT_FILE, io::to_json(&report).as_bytes())?;

    let failures = outcome.failures();
    if failures.is_empty() {
        Ok(CalibrateOutput {
            output_dir: dir,
            written,
            report,
        })
    } else {
        Err(CliError::Branch(failures))
    }
}

// ---- evaluate ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub source: String,
    pub target: String,
    /// Geodesic distance between estimated and true rotation.
    pub rotation_error_deg: f64,
    pub translation_error_m: f64,
    /// E_mean stored in the calibration file.
    pub calibration_mean_px: f64,
    /// Pixel distance between projections of the true 3D features under
    /// the estimated and the true pose, averaged / maximised over features.
    pub reprojection_delta_mean_px: f64,
    pub reprojection_delta_max_px: f64,
    pub features: usize,
    pub config_digest: String,
    pub seed: u64,
    pub groundtruth_config_digest: String,
}

/// Where [`cmd_evaluate`] writes when no output path is given:
/// `<calib stem>_evaluation.json` next to the calibration file.
pub fn default_evaluation_path(calib: &Path) -> PathBuf {
    let stem = calib
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    calib.with_file_name(format!("{stem}_evaluation.json"))
}

fn read_json_schema<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    io::read_json(path).map_err(|e| match e {
        IoError::Io { .. } => CliError::from(e),
        other => CliError::Config(format!("schema mismatch: {other}")),
    })
}

pub fn evaluate(record: &CalibrationRecord, gt: &GroundTruth) -> Result<Evaluation, CliError> {
    let (truth, k, features): (&Pose, &CameraIntrinsics, &[[f64; 3]]) =
        match (record.source.as_str(), record.target.as_str()) {
            ("lidar", "event_camera") => (&gt.lidar_to_event, &gt.event_intrinsics, &gt.led_corners_lidar),
            ("lidar", "rgb_camera") => (&gt.lidar_to_rgb, &gt.rgb_intrinsics, &gt.marker_corners_lidar),
            (s, t) => {
                return Err(CliError::Config(format!(
                    "sensor pair {s} -> {t} has no ground truth (expected lidar -> event_camera or lidar -> rgb_camera)"
                )))
            }
        };
    let pose = record.pose();
    let mut deltas = Vec::with_capacity(features.len());
    for x in features {
        let x = Point3::from(*x);
        let a = project(&x, &pose, k)
            .map_err(|e| CliError::Config(format!("projecting with the estimate: {e}")))?;
        let b = project(&x, truth, k)
            .map_err(|e| CliError::Config(format!("projecting with ground truth: {e}")))?;
        deltas.push((a - b).norm());
    }
    let n = deltas.len();
    Ok(Evaluation {
        source: record.source.clone(),
        target: record.target.clone(),
        rotation_error_deg: pose.rotation_error(truth).to_degrees(),
        translation_error_m: pose.translation_error(truth),
        calibration_mean_px: record.reprojection.mean_px,
        reprojection_delta_mean_px: if n == 0 {
            0.0
        } else {
            deltas.iter().sum::<f64>() / n as f64
        },
        reprojection_delta_max_px: deltas.iter().copied().fold(0.0, f64::max),
        features: n,
        config_digest: record.config_digest.clone(),
        seed: record.seed,
        groundtruth_config_digest: gt.config_digest.clone(),
    })
}

/// Compares a calibration file against simulator ground truth and writes
/// the result as JSON to `out` (default: [`default_evaluation_path`]).
pub fn cmd_evaluate(
    calib: &Path,
    groundtruth: &Path,
    out: Option<&Path>,
) -> Result<Evaluation, CliError> {
    let record: CalibrationRecord = read_json_schema(calib)?;
    let gt: GroundTruth = read_json_schema(groundtruth)?;
    let eval = evaluate(&record, &gt)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_evaluation_path(calib));
    write(&out, io::to_json(&eval).as_bytes())?;
    Ok(eval)
}

// ---- report ----

#[derive(Debug, Clone, PartialEq)]
pub enum ReportSource {
    Image(PathBuf),
    /// Event file; the frame starts at `t0_us`, or at the first event.
    Events {
        path: PathBuf,
        t0_us: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub points_drawn: usize,
    pub warnings: Vec<String>,
}

/// Projects `cloud` with the calibration onto an image or an event frame
/// and writes the SVG overlay. Warnings are also printed to stderr.
pub fn cmd_report(
    calib: &Path,
    cloud: &Path,
    source: &ReportSource,
    intrinsics: &Path,
    out_svg: &Path,
) -> Result<ReportOutput, CliError> {
    let record: CalibrationRecord = read_json_schema(calib)?;
    let k = io::read_intrinsics(intrinsics)?;
    let cloud = io::read_cloud(cloud)?;
    let raster = match source {
        ReportSource::Image(path) => {
            let img = io::read_image(path)?;
            if (img.width, img.height) != (k.width, k.height) {
                return Err(CliError::Config(format!(
                    "image {} is {}x{}, intrinsics say {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    k.width,
                    k.height
                )));
            }
            img
        }
        ReportSource::Events { path, t0_us } => {
            let events = io::read_events(path)?;
            let t0 = t0_us.unwrap_or_else(|| events.iter().map(|e| e.t).min().unwrap_or(0));
            event_frame(&events, k.width, k.height, t0)
        }
    };
    let mut warnings = Vec::new();
    let points = project_cloud(&cloud, &record.pose(), &k);
    if cloud.is_empty() {
        warnings.push("point cloud is empty; the overlay contains the raster only".to_string());
    } else if points.is_empty() {
        warnings.push("no cloud point projects into the image".to_string());
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let title = format!("{} -> {}", record.source, record.target);
    let svg = render_svg(&raster, &points, &title, &record.config_digest, record.seed);
    write(out_svg, svg.as_bytes())?;
    Ok(ReportOutput {
        points_drawn: points.len(),
        warnings,
    })
}
