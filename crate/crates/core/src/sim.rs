//! Synthetic scenes with known ground truth: LED event streams, LiDAR
//! returns on the three visible faces, and a rendered RGB frame of the
//! markers.
//!
//! Each sensor draws from its own ChaCha8 stream of the scene seed, so the
//! three generators are independent and reproducible.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{sort_events, Event};
use crate::geometry::{project, CameraIntrinsics, Point2, Point3, Pose};
use crate::io::{self, IoError};
use crate::lidar::{PointCloud, Roi};
use crate::rgb::render::{marker_cell, RenderStyle};
use crate::rgb::{GrayImage, MarkerDetection};
use crate::target::{
    build_geometry, marker_origin, TargetError, TargetGeometry, TargetSpec, MARKERS_PER_FACE,
    NUM_FACES, NUM_MARKERS,
};

const STREAM_EVENTS: u64 = 1;
const STREAM_CLOUD: u64 = 2;
const STREAM_RGB: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("LED {0} does not project inside the event frame")]
    LedOutOfFrame(usize),
    #[error("marker {0} does not project inside the RGB frame")]
    MarkerOutOfFrame(u16),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Log-intensity model of one LED footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedRenderModel {
    pub footprint_radius_px: f64,
    /// Contrast threshold `C` in log-intensity units.
    pub contrast_threshold: f64,
    pub on_level: f64,
    pub off_level: f64,
}

impl Default for LedRenderModel {
    fn default() -> Self {
        Self {
            footprint_radius_px: 4.0,
            contrast_threshold: 1.0,
            on_level: 1.5,
            off_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub lidar_noise_sigma_m: f64,
    pub lidar_outlier_fraction: f64,
    /// Gaussian noise on the emitted RGB corner list only; the image is clean.
    pub pixel_noise_sigma_px: f64,
    pub event_jitter_sigma_us: f64,
    pub noise_event_rate_hz: f64,
    /// Nominal LiDAR returns per face before outliers replace a fraction.
    pub points_per_face: usize,
    pub target: TargetSpec,
    /// Target frame to LiDAR frame.
    pub target_pose_in_lidar: Pose,
    pub gt_pose_lidar_to_event: Pose,
    pub gt_pose_lidar_to_rgb: Pose,
    pub event_intrinsics: CameraIntrinsics,
    pub rgb_intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub led: LedRenderModel,
    #[serde(default)]
    pub rgb_render: RenderStyle,
}

/// Camera pose (LiDAR to camera) for a camera at `eye` (LiDAR frame)
/// looking at `at`, rolled by `roll` radians about its optical axis.
/// LiDAR convention: x forward, y left, z up; camera: x right, y down,
/// z forward.
pub fn look_at(eye: Vector3<f64>, at: Vector3<f64>, roll: f64) -> Pose {
    let fwd = (at - eye).normalize();
    let right = fwd.cross(&Vector3::z()).normalize();
    let down = fwd.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), roll).into_inner() * r;
    Pose::from_rotation_matrix(&r, -r * eye)
}

/// Target placement with `E_0` at `distance` meters from the LiDAR along
/// `toward` (LiDAR frame) and the three visible faces turned to the
/// sensors; `spin` rotates the cube about the viewing axis.
pub fn facing_target_pose(toward: Vector3<f64>, distance: f64, spin: f64) -> Pose {
    // unit vector from the cube to the sensors
    let a = -toward.normalize();
    let b = (Vector3::z() - a * a.z).normalize();
    let c = a.cross(&b);
    let normal =
        |phi: f64| a / 3f64.sqrt() + (b * phi.cos() + c * phi.sin()) * (2.0f64 / 3.0).sqrt();
    let third = 2.0 * std::f64::consts::PI / 3.0;
    let top = normal(spin);
    let (mut nx, mut ny) = (normal(spin + third), normal(spin - third));
    if Matrix3::from_columns(&[nx, ny, top]).determinant() > 0.0 {
        std::mem::swap(&mut nx, &mut ny);
    }
    // outward normals are -x_t, -y_t, -z_t
    let r = Matrix3::from_columns(&[-nx, -ny, -top]);
    Pose::from_rotation_matrix(&r, toward.normalize() * distance)
}

impl Default for SceneConfig {
    fn default() -> Self {
        let target = TargetSpec::default();
        let target_pose = facing_target_pose(Vector3::new(1.0, 0.06, -0.35), 1.6, 0.12);
        let l = target.edge_length_m;
        let center = target_pose
            .transform_point(&Point3::new(l / 2.0, l / 2.0, l / 2.0))
            .coords;
        Self {
            seed: 0,
            duration_s: 2.0,
            lidar_noise_sigma_m: 0.0,
            lidar_outlier_fraction: 0.0,
            pixel_noise_sigma_px: 0.0,
            event_jitter_sigma_us: 0.0,
            noise_event_rate_hz: 0.0,
            points_per_face: 1500,
            target,
            target_pose_in_lidar: target_pose,
            gt_pose_lidar_to_event: look_at(Vector3::new(0.03, 0.12, -0.08), center, 0.03),
            gt_pose_lidar_to_rgb: look_at(Vector3::new(0.02, -0.13, -0.06), center, -0.02),
            event_intrinsics: CameraIntrinsics {
                dist: [-0.08, 0.02, 0.0, 0.0, 0.0],
                ..CameraIntrinsics::pinhole(1000.0, 1000.0, 640.0, 360.0, 1280, 720)
            },
            rgb_intrinsics: CameraIntrinsics::pinhole(1400.0, 1400.0, 960.0, 540.0, 1920, 1080),
            led: LedRenderModel::default(),
            rgb_render: RenderStyle::default(),
        }
    }
}

impl SceneConfig {
    /// The default rig with every noise source switched off.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// The default rig with sensor noise of realistic magnitude.
    pub fn realistic(seed: u64) -> Self {
        Self {
            seed,
            lidar_noise_sigma_m: 0.01,
            lidar_outlier_fraction: 0.1,
            pixel_noise_sigma_px: 0.5,
            event_jitter_sigma_us: 100.0,
            noise_event_rate_hz: 20_000.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if !(0.0..=1.0).contains(&self.lidar_outlier_fraction) {
            return bad("lidar_outlier_fraction must be in [0, 1]");
        }
        for (name, v) in [
            ("lidar_noise_sigma_m", self.lidar_noise_sigma_m),
            ("pixel_noise_sigma_px", self.pixel_noise_sigma_px),
            ("event_jitter_sigma_us", self.event_jitter_sigma_us),
            ("noise_event_rate_hz", self.noise_event_rate_hz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        let led = &self.led;
        if !(led.contrast_threshold > 0.0 && led.on_level - led.off_level > led.contrast_threshold)
        {
            return bad("LED on/off contrast must exceed the contrast threshold");
        }
        if !(led.footprint_radius_px >= 0.0) {
            return bad("footprint_radius_px must be >= 0");
        }
        if self.rgb_render.supersample == 0 {
            return bad("rgb_render.supersample must be at least 1");
        }
        self.event_intrinsics
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("event_intrinsics: {e}")))?;
        self.rgb_intrinsics
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("rgb_intrinsics: {e}")))?;
        self.target.validate()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<TargetGeometry, SimError> {
        Ok(build_geometry(&self.target)?)
    }

    pub fn target_to_event(&self) -> Pose {
        self.gt_pose_lidar_to_event
            .compose(&self.target_pose_in_lidar)
    }

    pub fn target_to_rgb(&self) -> Pose {
        self.gt_pose_lidar_to_rgb
            .compose(&self.target_pose_in_lidar)
    }

    /// LiDAR-frame box around the target, padded by `margin` meters.
    pub fn suggested_roi(&self, margin: f64) -> Roi {
        let l = self.target.edge_length_m;
        let mut min = [f64::MAX; 3];
        let mut max = [f64::MIN; 3];
        for x in [0.0, l] {
            for y in [0.0, l] {
                for z in [0.0, l] {
                    let p = self
                        .target_pose_in_lidar
                        .transform_point(&Point3::new(x, y, z));
                    for i in 0..3 {
                        min[i] = min[i].min(p[i] - margin);
                        max[i] = max[i].max(p[i] + margin);
                    }
                }
            }
        }
        Roi { min, max }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Exact pixel of every LED corner in the event image.
    pub fn led_pixels(&self) -> Result<Vec<Point2>, SimError> {
        let g = self.geometry()?;
        let pose = self.target_to_event();
        let k = &self.event_intrinsics;
        g.corners
            .iter()
            .enumerate()
            .map(|(i, c)| match project(c, &pose, k) {
                Ok(p) if k.contains(&p) => Ok(p),
                _ => Err(SimError::LedOutOfFrame(i)),
            })
            .collect()
    }

    /// Exact pixel of every marker corner `A_i` in the RGB image.
    pub fn marker_pixels(&self) -> Result<Vec<Point2>, SimError> {
        let g = self.geometry()?;
        let pose = self.target_to_rgb();
        let k = &self.rgb_intrinsics;
        g.aruco_corners
            .iter()
            .enumerate()
            .map(|(i, c)| match project(c, &pose, k) {
                Ok(p) if k.contains(&p) => Ok(p),
                _ => Err(SimError::MarkerOutOfFrame(self.target.marker_id(i / 4))),
            })
            .collect()
    }
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

/// Events of the blinking LEDs plus uniform background noise, sorted by
/// timestamp. Every footprint pixel starts dark; each LED switches on at a
/// random phase in its first half period and toggles every half period.
/// Events follow the reference-level model: whenever the log intensity
/// differs from the last event's level by `C` or more, an event is emitted
/// and the reference moves by `C` towards the new level.
pub fn simulate_events(cfg: &SceneConfig) -> Result<Vec<Event>, SimError> {
    cfg.validate()?;
    let centers = cfg.led_pixels()?;
    let mut rng = cfg.rng(STREAM_EVENTS);
    let k = &cfg.event_intrinsics;
    let led = &cfg.led;
    let duration_us = (cfg.duration_s * 1e6).round() as u64;
    let jitter = gaussian(cfg.event_jitter_sigma_us);
    let mut events = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        let freq = cfg.target.led_frequencies_hz[i];
        let half = 0.5 / freq;
        let phase = rng.random::<f64>() * half;
        let r = led.footprint_radius_px;
        let (x0, x1) = (
            (c.x - r).ceil().max(0.0) as u32,
            (c.x + r).floor().min(k.width as f64 - 1.0) as u32,
        );
        let (y0, y1) = (
            (c.y - r).ceil().max(0.0) as u32,
            (c.y + r).floor().min(k.height as f64 - 1.0) as u32,
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - c.x).hypot(y as f64 - c.y) > r {
                    continue;
                }
                let mut reference = led.off_level;
                let mut on = false;
                let mut m = 0u64;
                loop {
                    let t = phase + m as f64 * half;
                    if t >= cfg.duration_s {
                        break;
                    }
                    on = !on;
                    let level = if on { led.on_level } else { led.off_level };
                    while (level - reference).abs() >= led.contrast_threshold {
                        let pol: i8 = if level > reference { 1 } else { -1 };
                        reference += pol as f64 * led.contrast_threshold;
                        let mut t_us = t * 1e6;
                        if let Some(n) = &jitter {
                            t_us += n.sample(&mut rng);
                        }
                        let t_us = t_us.round().clamp(0.0, (duration_us - 1) as f64) as u64;
                        events.push(Event::new(x as u16, y as u16, t_us, pol));
                    }
                    m += 1;
                }
            }
        }
    }
    let expected = cfg.noise_event_rate_hz * cfg.duration_s;
    if expected > 0.0 {
        let count = Poisson::new(expected)
            .expect("positive rate")
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let t = rng.random_range(0..duration_us);
            let x = rng.random_range(0..k.width) as u16;
            let y = rng.random_range(0..k.height) as u16;
            let pol = if rng.random::<bool>() { 1 } else { -1 };
            events.push(Event::new(x, y, t, pol));
        }
    }
    sort_events(&mut events);
    Ok(events)
}

/// Outlier count for the configured fraction of `3 * points_per_face`
/// returns; the remaining returns are spread over the faces.
pub fn cloud_counts(cfg: &SceneConfig) -> ([usize; NUM_FACES], usize) {
    let total = NUM_FACES * cfg.points_per_face;
    let outliers = (cfg.lidar_outlier_fraction * total as f64).round() as usize;
    let inliers = total - outliers.min(total);
    let mut per_face = [inliers / NUM_FACES; NUM_FACES];
    for f in per_face.iter_mut().take(inliers % NUM_FACES) {
        *f += 1;
    }
    (per_face, outliers)
}

/// Uniform returns on the three visible faces plus Gaussian noise, followed
/// by outliers uniform in the target's bounding box scaled 2× about its
/// center. Points are in the LiDAR frame.
pub fn simulate_cloud(cfg: &SceneConfig) -> Result<PointCloud, SimError> {
    cfg.validate()?;
    let g = cfg.geometry()?;
    let mut rng = cfg.rng(STREAM_CLOUD);
    let noise = gaussian(cfg.lidar_noise_sigma_m);
    let pose = &cfg.target_pose_in_lidar;
    let l = g.edge_length;
    let (per_face, outliers) = cloud_counts(cfg);
    let mut points = Vec::with_capacity(per_face.iter().sum::<usize>() + outliers);
    for (face, &n) in per_face.iter().enumerate() {
        for _ in 0..n {
            let (u, v) = (rng.random::<f64>() * l, rng.random::<f64>() * l);
            let mut p = pose.transform_point(&g.face_point(face, u, v));
            if let Some(d) = &noise {
                p += Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
            }
            points.push(p);
        }
    }
    for _ in 0..outliers {
        let q = Point3::new(
            rng.random_range(-0.5 * l..1.5 * l),
            rng.random_range(-0.5 * l..1.5 * l),
            rng.random_range(-0.5 * l..1.5 * l),
        );
        points.push(pose.transform_point(&q));
    }
    Ok(PointCloud::new(points))
}

/// Renders the markers (nearest-neighbour by default) and returns the
/// exact projected corners, with optional Gaussian noise on the list.
pub fn simulate_rgb(cfg: &SceneConfig) -> Result<(GrayImage, Vec<MarkerDetection>), SimError> {
    cfg.validate()?;
    let g = cfg.geometry()?;
    let pixels = cfg.marker_pixels()?;
    let mut rng = cfg.rng(STREAM_RGB);
    let noise = gaussian(cfg.pixel_noise_sigma_px);
    let truth: Vec<MarkerDetection> = (0..NUM_MARKERS)
        .map(|slot| {
            let mut corners = [Point2::origin(); 4];
            for (c, out) in corners.iter_mut().enumerate() {
                *out = pixels[4 * slot + c];
                if let Some(d) = &noise {
                    out.x += d.sample(&mut rng);
                    out.y += d.sample(&mut rng);
                }
            }
            MarkerDetection {
                id: cfg.target.marker_id(slot),
                corners,
            }
        })
        .collect();
    Ok((render_rgb(cfg, &g), truth))
}

fn render_rgb(cfg: &SceneConfig, g: &TargetGeometry) -> GrayImage {
    let k = &cfg.rgb_intrinsics;
    let dict = cfg.target.dictionary().expect("validated dictionary");
    let cam_to_target = cfg.target_to_rgb().inverse();
    let origin = cam_to_target.translation;
    let rot = cam_to_target.rotation;
    let l = g.edge_length;
    let s = cfg.target.marker_side_m;
    let markers: Vec<(u16, f64, f64)> = (0..NUM_MARKERS)
        .map(|slot| {
            let (u0, v0) = marker_origin(&cfg.target, slot % MARKERS_PER_FACE);
            (cfg.target.marker_id(slot), u0, v0)
        })
        .collect();

    // only pixels inside the projected cube outline need ray casting
    let pose = cfg.target_to_rgb();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for x in [0.0, l] {
        for y in [0.0, l] {
            for z in [0.0, l] {
                if let Ok(p) = project(&Point3::new(x, y, z), &pose, k) {
                    x0 = x0.min(p.x);
                    y0 = y0.min(p.y);
                    x1 = x1.max(p.x);
                    y1 = y1.max(p.y);
                }
            }
        }
    }
    let (x0, y0, x1, y1) = (x0 - 2.0, y0 - 2.0, x1 + 2.0, y1 + 2.0);

    cfg.rgb_render.rasterize(k.width, k.height, |px, py| {
        if px < x0 || px > x1 || py < y0 || py > y1 {
            return true;
        }
        let Ok((xn, yn)) = k.normalize(&Point2::new(px, py)) else {
            return true;
        };
        let dir = rot * Vector3::new(xn, yn, 1.0);
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (face, fr) in g.face_frames.iter().enumerate() {
            let denom = fr.normal.dot(&dir);
            if denom.abs() < 1e-15 {
                continue;
            }
            let t = -fr.normal.dot(&origin) / denom;
            if t <= 0.0 || best.is_some_and(|b| t >= b.0) {
                continue;
            }
            let hit = origin + dir * t;
            let (u, v) = (fr.u.dot(&hit), fr.v.dot(&hit));
            if (0.0..=l).contains(&u) && (0.0..=l).contains(&v) {
                best = Some((t, face, u, v));
            }
        }
        let Some((_, face, u, v)) = best else {
            return true;
        };
        for &(id, u0, v0) in &markers[face * MARKERS_PER_FACE..(face + 1) * MARKERS_PER_FACE] {
            if let Some(white) = marker_cell(dict, id, (u - u0) / s, (v - v0) / s) {
                return white;
            }
        }
        true
    })
}

/// Ground truth written next to a simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub config_digest: String,
    pub seed: u64,
    pub target_pose_in_lidar: Pose,
    pub lidar_to_event: Pose,
    pub lidar_to_rgb: Pose,
    pub event_intrinsics: CameraIntrinsics,
    pub rgb_intrinsics: CameraIntrinsics,
    /// `E_0..E_6` in the LiDAR frame.
    pub led_corners_lidar: Vec<[f64; 3]>,
    /// `A_0..A_59` in the LiDAR frame.
    pub marker_corners_lidar: Vec<[f64; 3]>,
    /// Exact projections of `E_i` into the event image.
    pub led_pixels: Vec<[f64; 2]>,
    /// Exact projections of `A_i` into the RGB image.
    pub marker_pixels: Vec<[f64; 2]>,
    pub marker_ids: Vec<u16>,
}

impl GroundTruth {
    pub fn from_config(cfg: &SceneConfig) -> Result<Self, SimError> {
        let g = cfg.geometry()?;
        let to_lidar = |p: &Point3| {
            let q = cfg.target_pose_in_lidar.transform_point(p);
            [q.x, q.y, q.z]
        };
        Ok(Self {
            config_digest: io::config_digest(cfg),
            seed: cfg.seed,
            target_pose_in_lidar: cfg.target_pose_in_lidar,
            lidar_to_event: cfg.gt_pose_lidar_to_event,
            lidar_to_rgb: cfg.gt_pose_lidar_to_rgb,
            event_intrinsics: cfg.event_intrinsics,
            rgb_intrinsics: cfg.rgb_intrinsics,
            led_corners_lidar: g.corners.iter().map(to_lidar).collect(),
            marker_corners_lidar: g.aruco_corners.iter().map(to_lidar).collect(),
            led_pixels: cfg.led_pixels()?.iter().map(|p| [p.x, p.y]).collect(),
            marker_pixels: cfg.marker_pixels()?.iter().map(|p| [p.x, p.y]).collect(),
            marker_ids: (0..NUM_MARKERS).map(|s| cfg.target.marker_id(s)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub const EVENTS_FILE: &str = "events.evb";
pub const CLOUD_FILE: &str = "cloud.ply";
pub const IMAGE_FILE: &str = "rgb.pgm";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.json";
pub const SCENE_FILE: &str = "scene.toml";
pub const EVENT_INTRINSICS_FILE: &str = "event_intrinsics.toml";
pub const RGB_INTRINSICS_FILE: &str = "rgb_intrinsics.toml";
pub const TARGET_FILE: &str = "target.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Simulates every sensor and writes the scene into `out_dir`, together
/// with the intrinsics/target files a calibration run needs. Returns the
/// manifest (also written as `manifest.json`).
pub fn write_scene(cfg: &SceneConfig, out_dir: &Path) -> Result<Manifest, SimError> {
    cfg.validate()?;
    let (events, cloud, (image, truth)) = {
        let (ev, rest) = rayon::join(
            || simulate_events(cfg),
            || rayon::join(|| simulate_cloud(cfg), || simulate_rgb(cfg)),
        );
        (ev?, rest.0?, rest.1?)
    };
    let gt = GroundTruth::from_config(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        (EVENTS_FILE, io::encode_evb(&events)),
        (CLOUD_FILE, io::encode_ply_binary(&cloud)),
        (IMAGE_FILE, io::encode_pgm(&image)),
        (DETECTIONS_FILE, io::to_json(&truth).into_bytes()),
        (GROUNDTRUTH_FILE, io::to_json(&gt).into_bytes()),
        (SCENE_FILE, io::to_toml(cfg).into_bytes()),
        (
            EVENT_INTRINSICS_FILE,
            io::to_toml(&cfg.event_intrinsics).into_bytes(),
        ),
        (
            RGB_INTRINSICS_FILE,
            io::to_toml(&cfg.rgb_intrinsics).into_bytes(),
        ),
        (TARGET_FILE, io::to_toml(&cfg.target).into_bytes()),
    ];
    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        io::write_bytes(&out_dir.join(name), bytes)?;
        entries.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: io::sha256_hex(bytes),
        });
    }
    let manifest = Manifest {
        config_digest: gt.config_digest,
        seed: cfg.seed,
        files: entries,
    };
    io::write_bytes(
        &out_dir.join(MANIFEST_FILE),
        io::to_json(&manifest).as_bytes(),
    )?;
    Ok(manifest)
}

/// Plane of face `face` in the LiDAR frame, outward normal.
pub fn face_plane_in_lidar(cfg: &SceneConfig, face: usize) -> crate::geometry::Plane {
    let n = cfg
        .target_pose_in_lidar
        .transform_vector(&-crate::target::face_frames()[face].normal);
    let p = cfg.target_pose_in_lidar.translation;
    crate::geometry::Plane::from_point_normal(&Point3::from(p), Unit::new_normalize(n).into_inner())
}
