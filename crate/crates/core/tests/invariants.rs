//! Cross-module invariants checked on generated inputs.

use calibcube_core::dictionary::Dictionary;
use calibcube_core::events::{estimate_frequency_map, FrequencyConfig};
use calibcube_core::lidar::{detect_cube, RansacParams};
use calibcube_core::pnp::{reprojection_stats, Correspondence, CorrespondenceSet};
use calibcube_core::rgb::{detect_markers, is_convex_clockwise, DetectorParams};
use calibcube_core::sim::{simulate_cloud, simulate_events, simulate_rgb, SceneConfig};
use calibcube_core::target::build_geometry;
use calibcube_core::{CameraIntrinsics, Point2, Point3, Pose, TargetSpec};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn yawed(cfg: &SceneConfig, yaw: f64) -> SceneConfig {
    let spin = Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        Vector3::zeros(),
    );
    let mut out = cfg.clone();
    out.target_pose_in_lidar = cfg.target_pose_in_lidar.compose(&spin);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn target_geometry_is_a_cube(edge in 0.2f64..2.0, ratio in 0.1f64..0.25) {
        let spec = TargetSpec {
            edge_length_m: edge,
            marker_side_m: ratio * edge,
            ..TargetSpec::default()
        };
        let g = build_geometry(&spec).unwrap();
        prop_assert_eq!(g.corners[0], Point3::origin());
        let allowed = [edge, edge * 2f64.sqrt(), edge * 3f64.sqrt()];
        for i in 0..g.corners.len() {
            for j in i + 1..g.corners.len() {
                let d = (g.corners[i] - g.corners[j]).norm();
                prop_assert!(
                    allowed.iter().any(|a| (d - a).abs() < 1e-9),
                    "E{} E{}: {}", i, j, d
                );
            }
        }
        prop_assert_eq!(g.aruco_corners.len(), 60);
        for a in &g.aruco_corners {
            let zeros = (0..3).filter(|&k| a[k] == 0.0).count();
            prop_assert_eq!(zeros, 1);
        }
    }

    #[test]
    fn reprojection_stats_are_consistent(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 2.0f64..6.0), 4..40),
        noise in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 40),
        yaw in -0.3f64..0.3,
    ) {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 320.0, 240.0, 640, 480);
        let pose = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw),
            Vector3::new(0.1, -0.05, 0.2),
        );
        let pairs = pts
            .iter()
            .zip(&noise)
            .enumerate()
            .map(|(i, (&(x, y, z), &(dx, dy)))| {
                let p = Point3::new(x, y, z);
                let px = calibcube_core::geometry::project(&p, &pose, &k).unwrap();
                Correspondence::new(format!("P{i}"), p, px + nalgebra::Vector2::new(dx, dy))
            })
            .collect();
        let stats = reprojection_stats(&CorrespondenceSet::new(pairs, k), &pose).unwrap();
        let mean = stats.per_point.iter().map(|r| r.residual_px).sum::<f64>()
            / stats.per_point.len() as f64;
        prop_assert_eq!(stats.n, pts.len());
        prop_assert!((stats.mean_px - mean).abs() < 1e-12);
        prop_assert!(stats.max_px >= stats.mean_px && stats.mean_px >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cube_detection_invariants(seed in 0u64..1000, sigma in 0.0f64..0.01, yaw in -0.2f64..0.2) {
        let mut cfg = yawed(&SceneConfig::noiseless(seed), yaw);
        cfg.lidar_noise_sigma_m = sigma;
        cfg.lidar_outlier_fraction = 0.1;
        prop_assume!(cfg.validate().is_ok());
        let cloud = simulate_cloud(&cfg).unwrap();
        let params = RansacParams {
            inlier_threshold_m: (3.0 * sigma).max(0.01),
            seed,
            ..RansacParams::default()
        };
        let g = cfg.geometry().unwrap();
        let det = detect_cube(&cloud, &cfg.suggested_roi(0.3), &params, &g).unwrap();
        let tol = 2.0 * params.inlier_threshold_m;
        for plane in &det.planes {
            prop_assert!(plane.signed_distance(&det.corners[0]).abs() <= tol);
        }
        for i in 0..det.corners.len() {
            for j in i + 1..det.corners.len() {
                let measured = (det.corners[i] - det.corners[j]).norm();
                let nominal = (g.corners[i] - g.corners[j]).norm();
                prop_assert!((measured - nominal).abs() <= tol);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn simulated_events_are_sorted_and_in_band(seed in 0u64..1000, yaw in -0.15f64..0.15) {
        let mut cfg = yawed(&SceneConfig::realistic(seed), yaw);
        cfg.duration_s = 0.3;
        prop_assume!(cfg.validate().is_ok());
        let events = simulate_events(&cfg).unwrap();
        let (w, h) = (cfg.event_intrinsics.width, cfg.event_intrinsics.height);
        prop_assert!(events.windows(2).all(|p| p[0].t <= p[1].t));
        prop_assert!(events.iter().all(|e| (e.x as u32) < w && (e.y as u32) < h));

        let fc = FrequencyConfig::default();
        let span = (events[0].t, events.last().unwrap().t + 1);
        let map = estimate_frequency_map(&events, w, h, span, &fc).unwrap();
        prop_assert!(map.nonzero_count() > 0);
        for &v in map.values.iter().filter(|v| **v != 0.0) {
            prop_assert!((fc.f_min_hz..=fc.f_max_hz).contains(&(v as f64)), "{}", v);
        }
    }

    #[test]
    fn marker_detections_are_convex_and_known(seed in 0u64..1000, yaw in -0.1f64..0.1) {
        let cfg = yawed(&SceneConfig::noiseless(seed), yaw);
        prop_assume!(cfg.validate().is_ok());
        let (img, _) = simulate_rgb(&cfg).unwrap();
        let dict = Dictionary::aruco_4x4_50();
        let dets = detect_markers(&img, dict, &DetectorParams::default());
        prop_assert!(!dets.is_empty());
        for d in &dets {
            prop_assert!(is_convex_clockwise(&d.corners));
            prop_assert!((d.id as usize) < dict.len());
            prop_assert!(cfg.target.marker_slot(d.id).is_some(), "stray id {}", d.id);
        }
        let all_finite = dets
            .iter()
            .flat_map(|d| d.corners)
            .all(|c: Point2| c.x.is_finite() && c.y.is_finite());
        prop_assert!(all_finite);
    }
}
