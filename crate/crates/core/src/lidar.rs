//! Cube corners and marker corners in the LiDAR frame: sequential RANSAC
//! on the three visible faces, re-orthogonalisation, corner `E_0` as the
//! intersection of the faces, and the remaining points from the known
//! cube layout.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Plane, Point3, Pose};
use crate::target::{TargetGeometry, NUM_FACES, NUM_LEDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("no points left after cropping to the region of interest")]
    EmptyAfterCrop,
    #[error("invalid region of interest: min must be below max on every axis")]
    InvalidRoi,
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
    #[error("RANSAC round {round} found only {found} inliers")]
    InsufficientInliers { round: usize, found: usize },
    #[error("planes {a} and {b} meet at {angle_deg:.2} deg, not within 5 deg of 90")]
    NotOrthogonal { a: usize, b: usize, angle_deg: f64 },
    #[error("plane system is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Roi {
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacParams {
    pub inlier_threshold_m: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold_m: 0.01,
            max_iterations: 1000,
            min_inliers: 100,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), LidarError> {
        if !(self.inlier_threshold_m > 0.0) {
            return Err(LidarError::InvalidParams(
                "inlier_threshold_m must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(LidarError::InvalidParams(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Points strictly inside `roi`, in their original order.
pub fn crop_cloud(cloud: &PointCloud, roi: &Roi) -> Result<PointCloud, LidarError> {
    if (0..3).any(|i| !(roi.min[i] < roi.max[i])) {
        return Err(LidarError::InvalidRoi);
    }
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| roi.contains(&cloud.points[i]))
        .collect();
    if keep.is_empty() {
        return Err(LidarError::EmptyAfterCrop);
    }
    Ok(PointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        intensity: cloud
            .intensity
            .as_ref()
            .map(|v| keep.iter().map(|&i| v[i]).collect()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Indices into the input cloud, ascending.
    pub inliers: Vec<usize>,
}

fn iteration_rng(seed: u64, round: usize, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | iteration as u64);
    rng
}

fn count_inliers(points: &[Point3], candidates: &[usize], plane: &Plane, threshold: f64) -> usize {
    candidates
        .iter()
        .filter(|&&i| plane.signed_distance(&points[i]).abs() <= threshold)
        .count()
}

fn collect_inliers(
    points: &[Point3],
    candidates: &[usize],
    plane: &Plane,
    threshold: f64,
) -> Vec<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&i| plane.signed_distance(&points[i]).abs() <= threshold)
        .collect()
}

/// Single RANSAC round over `candidates`. Iterations are independent (own
/// RNG stream each) and the winner is the highest inlier count, lowest
/// iteration index on ties, so the result does not depend on scheduling.
fn ransac_round(
    points: &[Point3],
    candidates: &[usize],
    params: &RansacParams,
    round: usize,
) -> Option<(Plane, usize)> {
    if candidates.len() < 3 {
        return None;
    }
    let n = candidates.len();
    let best = (0..params.max_iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = iteration_rng(params.seed, round, it);
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for lo in [a.min(b), a.max(b)] {
                if c >= lo {
                    c += 1;
                }
            }
            let plane = Plane::through(
                &points[candidates[a]],
                &points[candidates[b]],
                &points[candidates[c]],
            )?;
            let count = count_inliers(points, candidates, &plane, params.inlier_threshold_m);
            Some((count, it, plane))
        })
        .reduce_with(|x, y| {
            if x.0 > y.0 || (x.0 == y.0 && x.1 < y.1) {
                x
            } else {
                y
            }
        })?;
    Some((best.2, best.0))
}

/// Least-squares refinement: refit on the inliers until the inlier set is
/// stable. Returned inliers are all within the threshold of the returned plane.
fn refine_plane(
    points: &[Point3],
    candidates: &[usize],
    mut plane: Plane,
    threshold: f64,
) -> PlaneFit {
    let mut inliers = collect_inliers(points, candidates, &plane, threshold);
    for _ in 0..10 {
        let Some(refit) = Plane::fit(inliers.iter().map(|&i| &points[i])) else {
            break;
        };
        let next = collect_inliers(points, candidates, &refit, threshold);
        if next.len() < 3 {
            break;
        }
        plane = refit;
        let stable = next == inliers;
        inliers = next;
        if stable {
            break;
        }
    }
    PlaneFit { plane, inliers }
}

/// Three planes by sequential RANSAC: each round's inliers are removed
/// before the next. Deterministic for a given seed.
pub fn sequential_ransac_planes(
    cloud: &PointCloud,
    params: &RansacParams,
) -> Result<Vec<PlaneFit>, LidarError> {
    params.validate()?;
    let points = &cloud.points;
    if points.len() < NUM_FACES * params.min_inliers {
        return Err(LidarError::InsufficientInliers {
            round: 0,
            found: points.len(),
        });
    }
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fits = Vec::with_capacity(NUM_FACES);
    for round in 0..NUM_FACES {
        let Some((plane, count)) = ransac_round(points, &remaining, params, round) else {
            return Err(LidarError::InsufficientInliers { round, found: 0 });
        };
        if count < params.min_inliers.max(3) {
            return Err(LidarError::InsufficientInliers {
                round,
                found: count,
            });
        }
        let fit = refine_plane(points, &remaining, plane, params.inlier_threshold_m);
        if fit.inliers.len() < params.min_inliers.max(3) {
            return Err(LidarError::InsufficientInliers {
                round,
                found: fit.inliers.len(),
            });
        }
        let mut is_inlier = vec![false; points.len()];
        for &i in &fit.inliers {
            is_inlier[i] = true;
        }
        remaining.retain(|&i| !is_inlier[i]);
        fits.push(fit);
    }
    Ok(reassign_and_refit(points, fits, params.inlier_threshold_m))
}

/// Points near a shared edge lie within the threshold of two faces; giving
/// each point to its nearest plane only keeps one-sided edge points from
/// tilting the least-squares refit.
fn reassign_and_refit(points: &[Point3], mut fits: Vec<PlaneFit>, threshold: f64) -> Vec<PlaneFit> {
    for _ in 0..5 {
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); fits.len()];
        for (i, p) in points.iter().enumerate() {
            let nearest = fits
                .iter()
                .enumerate()
                .map(|(k, f)| (k, f.plane.signed_distance(p).abs()))
                .filter(|(_, d)| *d <= threshold)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, _)) = nearest {
                sets[k].push(i);
            }
        }
        let mut changed = false;
        for (fit, set) in fits.iter_mut().zip(sets) {
            if set == fit.inliers {
                continue;
            }
            let Some(plane) = Plane::fit(set.iter().map(|&i| &points[i])) else {
                continue;
            };
            changed = true;
            fit.plane = plane;
            fit.inliers = set;
        }
        if !changed {
            break;
        }
    }
    // final sets relative to the final planes
    for fit in fits.iter_mut() {
        fit.inliers
            .retain(|&i| fit.plane.signed_distance(&points[i]).abs() <= threshold);
    }
    fits
}

/// Planes in target face order (`z = 0` top face, `x = 0`, `y = 0`), with
/// normals pointing out of the cube, towards the sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPlanes {
    pub planes: [Plane; NUM_FACES],
    /// `face_assignment[face]` = index of the input plane used for that face.
    pub face_assignment: [usize; NUM_FACES],
}

pub const MAX_ORTHOGONALITY_DEVIATION_DEG: f64 = 5.0;

/// Nearest orthogonal matrix (polar factor) via SVD.
pub fn polar_orthogonal(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

/// Orients the planes towards the sensor at the origin, labels them by the
/// face convention (top face has the largest `+z` normal component; of the
/// two side faces, the `x = 0` face is the one whose cross product with the
/// `y = 0` face points away from the top normal), snaps the normals to the
/// nearest orthonormal triad, and re-fits offsets on each plane's inliers.
pub fn orthogonalize_and_label(
    fits: &[PlaneFit],
    points: &[Point3],
) -> Result<LabeledPlanes, LidarError> {
    assert_eq!(fits.len(), NUM_FACES, "exactly three planes");
    let oriented: Vec<Plane> = fits
        .iter()
        .map(|f| {
            if f.plane.offset > 0.0 {
                f.plane.flipped()
            } else {
                f.plane
            }
        })
        .collect();
    for a in 0..NUM_FACES {
        for b in a + 1..NUM_FACES {
            let cos = oriented[a].normal.dot(&oriented[b].normal).clamp(-1.0, 1.0);
            let angle_deg = cos.acos().to_degrees();
            if (angle_deg - 90.0).abs() > MAX_ORTHOGONALITY_DEVIATION_DEG {
                return Err(LidarError::NotOrthogonal { a, b, angle_deg });
            }
        }
    }
    let top = (0..NUM_FACES)
        .max_by(|&a, &b| {
            oriented[a]
                .normal
                .z
                .total_cmp(&oriented[b].normal.z)
                .then(b.cmp(&a))
        })
        .expect("three planes");
    let mut sides: Vec<usize> = (0..NUM_FACES).filter(|&i| i != top).collect();
    let cross = oriented[sides[0]].normal.cross(&oriented[sides[1]].normal);
    if cross.dot(&oriented[top].normal) > 0.0 {
        sides.swap(0, 1);
    }
    let order = [top, sides[0], sides[1]];

    let n = Matrix3::from_rows(&[
        oriented[order[0]].normal.transpose(),
        oriented[order[1]].normal.transpose(),
        oriented[order[2]].normal.transpose(),
    ]);
    let q = polar_orthogonal(&n);
    let planes = [0, 1, 2].map(|face| {
        let normal: Vector3<f64> = q.row(face).transpose();
        let inliers = &fits[order[face]].inliers;
        let offset = if inliers.is_empty() {
            oriented[order[face]].offset
        } else {
            inliers
                .iter()
                .map(|&i| normal.dot(&points[i].coords))
                .sum::<f64>()
                / inliers.len() as f64
        };
        Plane::new(normal, offset)
    });
    Ok(LabeledPlanes {
        planes,
        face_assignment: order,
    })
}

pub const MAX_PLANE_CONDITION: f64 = 1e6;

/// Unique point on all three planes.
pub fn intersect_three_planes(planes: &[Plane; 3]) -> Result<Point3, LidarError> {
    let n = Matrix3::from_rows(&[
        planes[0].normal.transpose(),
        planes[1].normal.transpose(),
        planes[2].normal.transpose(),
    ]);
    let sv = n.singular_values();
    let cond = if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    };
    if !(cond < MAX_PLANE_CONDITION) {
        return Err(LidarError::IllConditioned(cond));
    }
    let d = Vector3::new(planes[0].offset, planes[1].offset, planes[2].offset);
    let x = n.lu().solve(&d).ok_or(LidarError::IllConditioned(cond))?;
    Ok(Point3::from(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeDetection {
    pub planes: [Plane; NUM_FACES],
    pub face_assignment: [usize; NUM_FACES],
    pub inlier_counts: [usize; NUM_FACES],
    /// Target frame to LiDAR frame.
    pub target_pose: Pose,
    pub corners: [Point3; NUM_LEDS],
    pub aruco_corners: Vec<Point3>,
}

/// Target pose from `E_0` and the outward face normals: the target axes
/// are the inward normals of the `x = 0`, `y = 0` and `z = 0` faces.
pub fn target_pose_from_planes(planes: &[Plane; NUM_FACES], e0: &Point3) -> Pose {
    let r = Matrix3::from_columns(&[
        -planes[1].normal.into_inner(),
        -planes[2].normal.into_inner(),
        -planes[0].normal.into_inner(),
    ]);
    Pose::from_rotation_matrix(&r, e0.coords)
}

pub fn derive_target_points(
    labeled: &LabeledPlanes,
    e0: &Point3,
    geometry: &TargetGeometry,
) -> CubeDetection {
    let pose = target_pose_from_planes(&labeled.planes, e0);
    CubeDetection {
        planes: labeled.planes,
        face_assignment: labeled.face_assignment,
        inlier_counts: [0; NUM_FACES],
        target_pose: pose,
        corners: geometry.corners.map(|c| pose.transform_point(&c)),
        aruco_corners: geometry
            .aruco_corners
            .iter()
            .map(|a| pose.transform_point(a))
            .collect(),
    }
}

/// Whole LiDAR branch on an uncropped cloud.
pub fn detect_cube(
    cloud: &PointCloud,
    roi: &Roi,
    params: &RansacParams,
    geometry: &TargetGeometry,
) -> Result<CubeDetection, LidarError> {
    let cropped = crop_cloud(cloud, roi)?;
    let fits = sequential_ransac_planes(&cropped, params)?;
    let labeled = orthogonalize_and_label(&fits, &cropped.points)?;
    let e0 = intersect_three_planes(&labeled.planes)?;
    let mut det = derive_target_points(&labeled, &e0, geometry);
    det.inlier_counts = labeled.face_assignment.map(|i| fits[i].inliers.len());
    Ok(det)
}
