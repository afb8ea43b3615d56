use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calibcube::commands::{evaluate, EVENT_LIDAR_FILE, PIPELINE_FILE, REPORT_FILE, RGB_LIDAR_FILE};
use calibcube_core::io::{self, CalibrationRecord, ReprojectionRecord};
use calibcube_core::sim::{GroundTruth, SceneConfig, GROUNDTRUTH_FILE, MANIFEST_FILE};
use calibcube_core::{Point2, Point3, Pose};
use nalgebra::{UnitQuaternion, Vector3};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calibcube"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: u64) -> PathBuf {
    let scene = dir.join("scene");
    let out = run(&["simulate", "--out", s(&scene), "--seed", &seed.to_string()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    scene
}

fn gt(scene: &Path) -> GroundTruth {
    io::read_json(&scene.join(GROUNDTRUTH_FILE)).unwrap()
}

fn record_for(pose: &Pose, source: &str, target: &str) -> CalibrationRecord {
    let r = pose.rotation_matrix();
    CalibrationRecord {
        source: source.into(),
        target: target.into(),
        rotation_quaternion_wxyz: pose.quaternion_wxyz(),
        rotation_matrix_row_major: [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ],
        translation_m: pose.translation.into(),
        reprojection: ReprojectionRecord {
            mean_px: 0.0,
            max_px: 0.0,
            per_point: vec![],
        },
        config_digest: "test".into(),
        seed: 0,
    }
}

#[test]
fn simulate_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 3);
    assert!(scene.join(MANIFEST_FILE).is_file());
    assert!(scene.join(PIPELINE_FILE).is_file());
}

#[test]
fn simulate_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = run(&[
        "simulate",
        "--config",
        s(&missing),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.toml"));

    // a config without its `duration_s` key
    let cfg = io::to_toml(&SceneConfig::default());
    let text: String = cfg
        .lines()
        .filter(|l| !l.starts_with("duration_s"))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.path().join("scene.toml");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        s(&path),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("duration_s"), "{}", stderr(&out));
}

#[test]
fn simulate_unwritable_out_dir_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain_file");
    std::fs::write(&file, b"x").unwrap();
    let out = run(&["simulate", "--out", s(&file.join("scene"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn noiseless_calibration_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 1);
    let cfg = scene.join(PIPELINE_FILE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&["calibrate", "--config", s(&cfg), "--out", s(out_dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in [EVENT_LIDAR_FILE, RGB_LIDAR_FILE] {
        let rec: CalibrationRecord = io::read_json(&a.join(name)).unwrap();
        assert!(
            rec.reprojection.mean_px < 0.5,
            "{name}: {}",
            rec.reprojection.mean_px
        );
        assert_eq!(rec.seed, 1);
    }
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn missing_input_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 2);
    std::fs::remove_file(scene.join("cloud.ply")).unwrap();
    let out = run(&["calibrate", "--config", s(&scene.join(PIPELINE_FILE))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("inputs.cloud"), "{}", stderr(&out));
}

#[test]
fn event_branch_failure_keeps_rgb_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 4);
    let truth = gt(&scene);
    // keep only the events of three LEDs
    let events = io::read_events(&scene.join("events.evb")).unwrap();
    let keep: Vec<_> = events
        .into_iter()
        .filter(|e| {
            truth.led_pixels[..3].iter().any(|p| {
                (Point2::new(e.x as f64, e.y as f64) - Point2::new(p[0], p[1])).norm() < 8.0
            })
        })
        .collect();
    io::write_events(&scene.join("events.evb"), &keep).unwrap();
    let out = run(&["calibrate", "--config", s(&scene.join(PIPELINE_FILE))]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("event branch"), "{}", stderr(&out));
    let cal = scene.join("calibration");
    assert!(cal.join(RGB_LIDAR_FILE).is_file());
    assert!(!cal.join(EVENT_LIDAR_FILE).exists());
    let report: serde_json::Value = io::read_json(&cal.join(REPORT_FILE)).unwrap();
    assert!(report["event"]["failed"]["error"].is_string());
    assert!(report["rgb"]["ok"].is_object());
}

#[test]
fn evaluate_exact_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 5);
    let truth = gt(&scene);

    let exact = record_for(&truth.lidar_to_rgb, "lidar", "rgb_camera");
    let calib = dir.path().join("exact.json");
    std::fs::write(&calib, io::to_json(&exact)).unwrap();
    let out = run(&[
        "evaluate",
        "--calib",
        s(&calib),
        "--groundtruth",
        s(&scene.join(GROUNDTRUTH_FILE)),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let e: calibcube::Evaluation =
        io::read_json(&dir.path().join("exact_evaluation.json")).unwrap();
    assert_eq!(e.rotation_error_deg, 0.0);
    assert_eq!(e.translation_error_m, 0.0);
    assert_eq!(e.reprojection_delta_mean_px, 0.0);

    // ground truth rotated by 1 degree about an arbitrary axis
    let mut shifted = truth.clone();
    let axis = nalgebra::Unit::new_normalize(Vector3::new(0.3, -0.8, 0.5));
    let q =
        UnitQuaternion::from_axis_angle(&axis, 1f64.to_radians()) * truth.lidar_to_event.rotation;
    shifted.lidar_to_event = Pose::new(q, truth.lidar_to_event.translation);
    let gt_path = dir.path().join("shifted_gt.json");
    std::fs::write(&gt_path, io::to_json(&shifted)).unwrap();
    let rec = record_for(&truth.lidar_to_event, "lidar", "event_camera");
    let calib = dir.path().join("ev.json");
    std::fs::write(&calib, io::to_json(&rec)).unwrap();
    let e = calibcube::cmd_evaluate(&calib, &gt_path, None).unwrap();
    assert!(
        (e.rotation_error_deg - 1.0).abs() < 1e-6,
        "{}",
        e.rotation_error_deg
    );
    assert_eq!(e.translation_error_m, 0.0);
    assert!(e.reprojection_delta_mean_px > 1.0);
}

#[test]
fn evaluate_rejects_unknown_pair_and_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 6);
    let truth = gt(&scene);
    let rec = record_for(&truth.lidar_to_rgb, "lidar", "thermal_camera");
    assert!(evaluate(&rec, &truth).is_err());
    let calib = dir.path().join("c.json");
    std::fs::write(&calib, io::to_json(&rec)).unwrap();
    let gt_path = scene.join(GROUNDTRUTH_FILE);
    let out = run(&[
        "evaluate",
        "--calib",
        s(&calib),
        "--groundtruth",
        s(&gt_path),
    ]);
    assert_eq!(code(&out), 2);

    std::fs::write(&calib, r#"{"source": "lidar"}"#).unwrap();
    let out = run(&[
        "evaluate",
        "--calib",
        s(&calib),
        "--groundtruth",
        s(&gt_path),
    ]);
    assert_eq!(code(&out), 2);
}

fn circles(svg: &str) -> Vec<Point2> {
    svg.lines()
        .filter(|l| l.starts_with("<circle"))
        .map(|l| {
            let attr = |name: &str| -> f64 {
                let start = l.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                let end = start + l[start..].find('"').unwrap();
                l[start..end].parse().unwrap()
            };
            Point2::new(attr("cx"), attr("cy"))
        })
        .collect()
}

/// Convex hull (counter-clockwise in y-up terms) by monotone chain.
fn hull(mut pts: Vec<Point2>) -> Vec<Point2> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let cross =
        |o: &Point2, a: &Point2, b: &Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut h: Vec<Point2> = Vec::new();
    for pass in 0..2 {
        let start = h.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while h.len() >= start + 2 && cross(&h[h.len() - 2], &h[h.len() - 1], p) <= 0.0 {
                h.pop();
            }
            h.push(*p);
        }
        h.pop();
    }
    h
}

fn inside(poly: &[Point2], p: &Point2, tol: f64) -> bool {
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let e = b - a;
        let cross = e.x * (p.y - a.y) - e.y * (p.x - a.x);
        cross / e.norm() >= -tol
    })
}

#[test]
fn report_points_fall_inside_gt_silhouette() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 7);
    let out = run(&["calibrate", "--config", s(&scene.join(PIPELINE_FILE))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let truth = gt(&scene);
    let cfg: SceneConfig = io::read_toml(&scene.join("scene.toml")).unwrap();
    let l = cfg.target.edge_length_m;

    for (calib, intr, pose, k, source) in [
        (
            RGB_LIDAR_FILE,
            "rgb_intrinsics.toml",
            truth.lidar_to_rgb,
            truth.rgb_intrinsics,
            ("--image", "rgb.pgm"),
        ),
        (
            EVENT_LIDAR_FILE,
            "event_intrinsics.toml",
            truth.lidar_to_event,
            truth.event_intrinsics,
            ("--events", "events.evb"),
        ),
    ] {
        let svg_path = dir.path().join(format!("{calib}.svg"));
        let out = run(&[
            "report",
            "--calib",
            s(&scene.join("calibration").join(calib)),
            "--cloud",
            s(&scene.join("cloud.ply")),
            "--intrinsics",
            s(&scene.join(intr)),
            source.0,
            s(&scene.join(source.1)),
            "--out",
            s(&svg_path),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert_eq!(svg.matches("<image").count(), 1);
        assert_eq!(svg.matches(r#"<g id="points""#).count(), 1);

        let mut corners = Vec::new();
        for x in [0.0, l] {
            for y in [0.0, l] {
                for z in [0.0, l] {
                    let p = truth
                        .target_pose_in_lidar
                        .transform_point(&Point3::new(x, y, z));
                    corners.push(calibcube_core::geometry::project(&p, &pose, &k).unwrap());
                }
            }
        }
        let poly = hull(corners);
        let pts = circles(&svg);
        assert!(pts.len() > 1000);
        // SVG coordinates carry two decimals
        let within = pts.iter().filter(|p| inside(&poly, p, 0.01)).count();
        let frac = within as f64 / pts.len() as f64;
        assert!(frac >= 0.99, "{calib}: {frac}");
    }
}

#[test]
fn report_with_empty_cloud_warns() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 8);
    let truth = gt(&scene);
    let calib = dir.path().join("c.json");
    std::fs::write(
        &calib,
        io::to_json(&record_for(&truth.lidar_to_rgb, "lidar", "rgb_camera")),
    )
    .unwrap();
    let cloud = dir.path().join("empty.ply");
    io::write_cloud(&cloud, &calibcube_core::lidar::PointCloud::default()).unwrap();
    let svg_path = dir.path().join("o.svg");
    let out = run(&[
        "report",
        "--calib",
        s(&calib),
        "--cloud",
        s(&cloud),
        "--intrinsics",
        s(&scene.join("rgb_intrinsics.toml")),
        "--image",
        s(&scene.join("rgb.pgm")),
        "--out",
        s(&svg_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("warning"));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<image").count(), 1);
    assert!(!svg.contains("<circle"));
}

#[test]
fn report_missing_image_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 9);
    let truth = gt(&scene);
    let calib = dir.path().join("c.json");
    std::fs::write(
        &calib,
        io::to_json(&record_for(&truth.lidar_to_rgb, "lidar", "rgb_camera")),
    )
    .unwrap();
    let out = run(&[
        "report",
        "--calib",
        s(&calib),
        "--cloud",
        s(&scene.join("cloud.ply")),
        "--intrinsics",
        s(&scene.join("rgb_intrinsics.toml")),
        "--image",
        s(&dir.path().join("missing.pgm")),
        "--out",
        s(&dir.path().join("o.svg")),
    ]);
    assert_eq!(code(&out), 3);
}
