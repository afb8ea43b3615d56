//! Perspective-n-Point on matched target points, refined by
//! Levenberg–Marquardt, and the reprojection statistics used to judge a
//! calibration.
//!
//! Initialisation depends on the point layout:
//! - non-coplanar, `n >= 6`: normalized DLT on the 3×4 projection matrix;
//! - coplanar: homography between the fitted plane and the image;
//! - non-coplanar, `n` of 4 or 5: P3P on every triplet, the candidate with
//!   the lowest reprojection error over all points wins.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{
    DMatrix, Matrix2x6, Matrix3, Matrix3x4, Matrix6, SMatrix, UnitQuaternion, Vector2, Vector3,
    Vector6,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::LedKeypoint;
use crate::geometry::{project, skew, CameraIntrinsics, GeometryError, Point2, Point3, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("PnP needs at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("Levenberg-Marquardt did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("point {0} projects behind the camera")]
    BehindCamera(String),
    #[error("duplicate correspondence label {0}")]
    DuplicateLabel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub label: String,
    /// Point in the source (LiDAR) frame, meters.
    pub point: Point3,
    /// Measured pixel in the camera image (distorted).
    pub pixel: Point2,
}

impl Correspondence {
    pub fn new(label: impl Into<String>, point: Point3, pixel: Point2) -> Self {
        Self {
            label: label.into(),
            point,
            pixel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub camera: CameraIntrinsics,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>, camera: CameraIntrinsics) -> Self {
        Self { pairs, camera }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check_labels(&self) -> Result<(), PnpError> {
        let mut seen = HashSet::new();
        for p in &self.pairs {
            if !seen.insert(p.label.as_str()) {
                return Err(PnpError::DuplicateLabel(p.label.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpOptions {
    /// Huber threshold in pixels; plain least squares when `None`.
    #[serde(default)]
    pub huber_delta_px: Option<f64>,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            huber_delta_px: None,
            max_iterations: 200,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Dlt,
    Homography,
    P3p,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsics {
    /// Source (LiDAR) frame to camera frame.
    pub pose: Pose,
    /// Covariance of the `[rotation increment, translation]` parameters.
    pub covariance: Option<Matrix6<f64>>,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub extrinsics: Extrinsics,
    pub initialization: Initialization,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Residual of one correspondence in undistorted pixel units and its
/// Jacobian w.r.t. `[ω, δt]`, where the pose is perturbed as
/// `(exp(ω) R, t + δt)`.
pub fn residual_and_jacobian(
    pose: &Pose,
    point: &Point3,
    measured_normalized: &Vector2<f64>,
    k: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
    let rx = pose.rotation * point.coords;
    let pc = rx + pose.translation;
    if pc.z <= crate::geometry::MIN_DEPTH {
        return None;
    }
    let iz = 1.0 / pc.z;
    let r = Vector2::new(
        k.fx * (pc.x * iz - measured_normalized.x),
        k.fy * (pc.y * iz - measured_normalized.y),
    );
    let dproj = SMatrix::<f64, 2, 3>::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    );
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(dproj * -skew(&rx)));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
    Some((r, j))
}

/// Applies the local increment `[ω, δt]` used by the solver.
pub fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose::new(
        UnitQuaternion::from_scaled_axis(w) * pose.rotation,
        pose.translation + dt,
    )
}

fn huber_weight(norm: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if norm > d => d / norm,
        _ => 1.0,
    }
}

fn huber_cost(norm: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if norm > d => d * (2.0 * norm - d),
        _ => norm * norm,
    }
}

struct Problem<'a> {
    points: Vec<Point3>,
    normalized: Vec<Vector2<f64>>,
    k: &'a CameraIntrinsics,
    huber: Option<f64>,
}

impl Problem<'_> {
    fn cost(&self, pose: &Pose) -> Option<f64> {
        let mut sum = 0.0;
        for (x, m) in self.points.iter().zip(&self.normalized) {
            let pc = pose.transform_point(x);
            if pc.z <= crate::geometry::MIN_DEPTH {
                return None;
            }
            let r = Vector2::new(
                self.k.fx * (pc.x / pc.z - m.x),
                self.k.fy * (pc.y / pc.z - m.y),
            );
            sum += huber_cost(r.norm(), self.huber);
        }
        Some(sum)
    }

    fn normal_equations(&self, pose: &Pose) -> Option<(Matrix6<f64>, Vector6<f64>)> {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, m) in self.points.iter().zip(&self.normalized) {
            let (r, j) = residual_and_jacobian(pose, x, m, self.k)?;
            let w = huber_weight(r.norm(), self.huber);
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }
        Some((h, g))
    }
}

fn levenberg_marquardt(
    problem: &Problem,
    init: Pose,
    options: &PnpOptions,
) -> Result<(Pose, f64, f64, usize, Vec<f64>), PnpError> {
    let mut pose = init;
    let initial_cost = problem.cost(&pose).ok_or_else(|| {
        PnpError::DegenerateConfiguration("initial pose puts points behind the camera".into())
    })?;
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let scale = problem.points.len() as f64;
    for it in 0..options.max_iterations {
        if cost <= 1e-28 * scale {
            return Ok((pose, initial_cost, cost, it, history));
        }
        let (h, g) = problem.normal_equations(&pose).ok_or_else(|| {
            PnpError::DegenerateConfiguration("point behind camera during refinement".into())
        })?;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = apply_increment(&pose, &step);
            match problem.cost(&candidate) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    pose = candidate;
                    cost = c;
                    history.push(c);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < options.relative_tolerance || step.norm() < 1e-15 {
                        return Ok((pose, initial_cost, cost, it + 1, history));
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // no descent direction left: at a minimum to machine precision
            return Ok((pose, initial_cost, cost, it + 1, history));
        }
    }
    Err(PnpError::NoConvergence(options.max_iterations))
}

fn hartley_3d(points: &[Point3]) -> (Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mean_dist = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    (c, 3f64.sqrt() / mean_dist.max(1e-300))
}

fn hartley_2d(points: &[Vector2<f64>]) -> (Vector2<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    (c, 2f64.sqrt() / mean_dist.max(1e-300))
}

fn null_vector(a: &DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    Some(eig.eigenvectors.column(imin).into_owned())
}

fn pose_from_scaled_rotation(m: &Matrix3<f64>, t: &Vector3<f64>) -> Option<Pose> {
    let svd = m.svd(true, true);
    let scale = svd.singular_values.mean();
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut r = svd.u? * svd.v_t?;
    if r.determinant() < 0.0 {
        r = -r;
    }
    Some(Pose::from_rotation_matrix(&r, t / scale))
}

fn dlt_init(points: &[Point3], normalized: &[Vector2<f64>]) -> Option<Pose> {
    let (c3, s3) = hartley_3d(points);
    let (c2, s2) = hartley_2d(normalized);
    let n = points.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (p, m)) in points.iter().zip(normalized).enumerate() {
        let x = (p.coords - c3) * s3;
        let xh = [x.x, x.y, x.z, 1.0];
        let u = (m - c2) * s2;
        for k in 0..4 {
            a[(2 * i, k)] = xh[k];
            a[(2 * i, 8 + k)] = -u.x * xh[k];
            a[(2 * i + 1, 4 + k)] = xh[k];
            a[(2 * i + 1, 8 + k)] = -u.y * xh[k];
        }
    }
    let v = null_vector(&a)?;
    let pn = Matrix3x4::from_row_slice(v.as_slice());
    // undo the normalizations: P = T2^-1 Pn T3
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2.x, 0.0, 1.0 / s2, c2.y, 0.0, 0.0, 1.0);
    let mut t3 = nalgebra::Matrix4::identity() * s3;
    t3[(3, 3)] = 1.0;
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c3 * s3));
    let mut p = t2_inv * pn * t3;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let t: Vector3<f64> = p.column(3).into_owned();
    pose_from_scaled_rotation(&m, &t)
}

fn homography_init(points: &[Point3], normalized: &[Vector2<f64>]) -> Option<Pose> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    let basis = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);

    let plane_pts: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let d = p.coords - c;
            Vector2::new(d.dot(&e1), d.dot(&e2))
        })
        .collect();
    let (cp, sp) = hartley_2d(&plane_pts);
    let (ci, si) = hartley_2d(normalized);
    let mut a = DMatrix::zeros(2 * points.len(), 9);
    for (i, (q, m)) in plane_pts.iter().zip(normalized).enumerate() {
        let q = (q - cp) * sp;
        let u = (m - ci) * si;
        let qh = [q.x, q.y, 1.0];
        for k in 0..3 {
            a[(2 * i, k)] = qh[k];
            a[(2 * i, 6 + k)] = -u.x * qh[k];
            a[(2 * i + 1, 3 + k)] = qh[k];
            a[(2 * i + 1, 6 + k)] = -u.y * qh[k];
        }
    }
    let v = null_vector(&a)?;
    let hn = Matrix3::from_row_slice(v.as_slice());
    let ti_inv = Matrix3::new(1.0 / si, 0.0, ci.x, 0.0, 1.0 / si, ci.y, 0.0, 0.0, 1.0);
    let tp = Matrix3::new(sp, 0.0, -cp.x * sp, 0.0, sp, -cp.y * sp, 0.0, 0.0, 1.0);
    let mut h = ti_inv * hn * tp;
    // plane origin must be in front of the camera
    if h[(2, 2)] < 0.0 {
        h = -h;
    }
    let h1: Vector3<f64> = h.column(0).into_owned();
    let h2: Vector3<f64> = h.column(1).into_owned();
    let lambda = 0.5 * (h1.norm() + h2.norm());
    if !(lambda > 0.0) {
        return None;
    }
    let r1 = h1 / lambda;
    let r2 = h2 / lambda;
    let rp = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = rp.svd(true, true);
    let mut rot = svd.u? * svd.v_t?;
    if rot.determinant() < 0.0 {
        rot = -rot;
    }
    let tp_cam: Vector3<f64> = h.column(2).into_owned() / lambda;
    let r = rot * basis.transpose();
    Some(Pose::from_rotation_matrix(&r, tp_cam - r * c))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[i] += x;
    }
    out
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn poly_eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots of a polynomial given by ascending coefficients, via the
/// companion matrix and Newton polishing.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1
        && c.last()
            .is_some_and(|v| v.abs() < 1e-14 * c.iter().fold(0.0f64, |m, x| m.max(x.abs())))
    {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return vec![];
    }
    let lead = c[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let deriv: Vec<f64> = (1..=deg).map(|i| c[i] * i as f64).collect();
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = poly_eval(&deriv, x);
                if d.abs() < 1e-300 {
                    break;
                }
                x -= poly_eval(&c, x) / d;
            }
            x
        })
        .collect()
}

/// Rigid transform mapping `src` onto `dst` in the least-squares sense.
fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Some(Pose::from_rotation_matrix(&r, cd - r * cs))
}

/// Grunert-style P3P: up to four poses from three bearings.
fn p3p(world: [Point3; 3], normalized: [Vector2<f64>; 3]) -> Vec<Pose> {
    let j: Vec<Vector3<f64>> = normalized
        .iter()
        .map(|m| Vector3::new(m.x, m.y, 1.0).normalize())
        .collect();
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 <= 0.0 || b2 <= 0.0 || c2 <= 0.0 {
        return vec![];
    }
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);
    // depths s2 = u s1, s3 = v s1; Q(v) = 1 + v² - 2 v cosβ
    let q = [1.0, -2.0 * cos_b, 1.0];
    // K(v) = 1 - (c²/b²) Q(v)
    let k = poly_add(&[1.0], &poly_scale(&q, -c2 / b2));
    // u = N(v) / D(v)
    let num = poly_add(&poly_add(&k, &[0.0, 0.0, -1.0]), &poly_scale(&q, a2 / b2));
    let den = [2.0 * cos_g, -2.0 * cos_a];
    // u² - 2 cosγ u + K = 0, times D²
    let quartic = poly_add(
        &poly_add(
            &poly_mul(&num, &num),
            &poly_scale(&poly_mul(&num, &den), -2.0 * cos_g),
        ),
        &poly_mul(&k, &poly_mul(&den, &den)),
    );
    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        let d = poly_eval(&den, v);
        if d.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&num, v) / d;
        let qv = poly_eval(&q, v);
        if !(qv > 0.0 && u > 0.0 && v > 0.0) {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let cam = [j[0] * s1, j[1] * (u * s1), j[2] * (v * s1)];
        let src: Vec<Vector3<f64>> = world.iter().map(|p| p.coords).collect();
        if let Some(p) = kabsch(&src, &cam) {
            poses.push(p);
        }
    }
    poses
}

fn p3p_init(points: &[Point3], normalized: &[Vector2<f64>], k: &CameraIntrinsics) -> Option<Pose> {
    let n = points.len();
    let problem = Problem {
        points: points.to_vec(),
        normalized: normalized.to_vec(),
        k,
        huber: None,
    };
    let mut best: Option<(f64, Pose)> = None;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for pose in p3p(
                    [points[a], points[b], points[c]],
                    [normalized[a], normalized[b], normalized[c]],
                ) {
                    if let Some(cost) = problem.cost(&pose) {
                        if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                            best = Some((cost, pose));
                        }
                    }
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Singular values (descending) of the centered point matrix, scaled to RMS.
fn spread(points: &[Point3]) -> [f64; 3] {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|e| (e.max(0.0) / n).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub fn solve_pnp(corrs: &CorrespondenceSet, options: &PnpOptions) -> Result<PnpSolution, PnpError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PnpError::TooFewPoints(n));
    }
    corrs.check_labels()?;
    let k = &corrs.camera;
    let points: Vec<Point3> = corrs.pairs.iter().map(|p| p.point).collect();
    let normalized = corrs
        .pairs
        .iter()
        .map(|p| k.normalize(&p.pixel).map(|(x, y)| Vector2::new(x, y)))
        .collect::<Result<Vec<_>, _>>()?;

    let s = spread(&points);
    if !(s[0] > 0.0) || s[1] <= 1e-9 * s[0] {
        return Err(PnpError::DegenerateConfiguration(
            "points are collinear".into(),
        ));
    }
    let coplanar = s[2] <= 1e-6 * s[0];
    let (init, method) = if coplanar {
        (
            homography_init(&points, &normalized),
            Initialization::Homography,
        )
    } else if n >= 6 {
        (dlt_init(&points, &normalized), Initialization::Dlt)
    } else {
        (p3p_init(&points, &normalized, k), Initialization::P3p)
    };
    let init = init.ok_or_else(|| {
        PnpError::DegenerateConfiguration(format!("{method:?} initialisation failed"))
    })?;

    let problem = Problem {
        points,
        normalized,
        k,
        huber: options.huber_delta_px,
    };
    let (pose, initial_cost, final_cost, iterations, cost_history) =
        levenberg_marquardt(&problem, init, options)?;

    let covariance = if n > 3 {
        problem.normal_equations(&pose).and_then(|(h, _)| {
            let dof = (2 * n - 6) as f64;
            h.try_inverse().map(|inv| {
                let c = inv * (final_cost / dof);
                (c + c.transpose()) * 0.5
            })
        })
    } else {
        None
    };
    Ok(PnpSolution {
        extrinsics: Extrinsics {
            pose,
            covariance,
            source: String::new(),
            target: String::new(),
        },
        initialization: method,
        initial_cost,
        final_cost,
        iterations,
        cost_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub label: String,
    pub residual_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionStats {
    pub mean_px: f64,
    pub max_px: f64,
    pub per_point: Vec<PointResidual>,
    pub n: usize,
}

/// Euclidean pixel distance between each measurement and the projection
/// of its 3D point, aggregated into mean and max.
pub fn reprojection_stats(
    corrs: &CorrespondenceSet,
    pose: &Pose,
) -> Result<ReprojectionStats, PnpError> {
    let per_point = corrs
        .pairs
        .iter()
        .map(|c| {
            let p = project(&c.point, pose, &corrs.camera)
                .map_err(|_| PnpError::BehindCamera(c.label.clone()))?;
            Ok(PointResidual {
                label: c.label.clone(),
                residual_px: (p - c.pixel).norm(),
            })
        })
        .collect::<Result<Vec<_>, PnpError>>()?;
    let n = per_point.len();
    let mean_px = if n == 0 {
        0.0
    } else {
        per_point.iter().map(|r| r.residual_px).sum::<f64>() / n as f64
    };
    let max_px = per_point.iter().map(|r| r.residual_px).fold(0.0, f64::max);
    Ok(ReprojectionStats {
        mean_px,
        max_px,
        per_point,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationKind {
    EventLidar,
    RgbLidar,
}

impl CalibrationKind {
    pub fn sensors(&self) -> (&'static str, &'static str) {
        match self {
            CalibrationKind::EventLidar => ("lidar", "event_camera"),
            CalibrationKind::RgbLidar => ("lidar", "rgb_camera"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub kind: CalibrationKind,
    pub extrinsics: Extrinsics,
    pub stats: ReprojectionStats,
    pub solution: PnpSolution,
    pub correspondences: CorrespondenceSet,
}

fn calibrate(
    kind: CalibrationKind,
    corrs: CorrespondenceSet,
    options: &PnpOptions,
) -> Result<Calibration, PnpError> {
    let solution = solve_pnp(&corrs, options)?;
    let stats = reprojection_stats(&corrs, &solution.extrinsics.pose)?;
    let (source, target) = kind.sensors();
    let mut extrinsics = solution.extrinsics.clone();
    extrinsics.source = source.into();
    extrinsics.target = target.into();
    Ok(Calibration {
        kind,
        extrinsics,
        stats,
        solution,
        correspondences: corrs,
    })
}

/// Joins LiDAR cube corners with event keypoints by corner index.
pub fn calibrate_event_lidar(
    corners: &[Point3],
    keypoints: &[LedKeypoint],
    k: &CameraIntrinsics,
    options: &PnpOptions,
) -> Result<Calibration, PnpError> {
    let mut kps: Vec<&LedKeypoint> = keypoints
        .iter()
        .filter(|kp| kp.corner_index < corners.len())
        .collect();
    kps.sort_by_key(|kp| kp.corner_index);
    let pairs: Vec<Correspondence> = kps
        .iter()
        .map(|kp| {
            Correspondence::new(
                format!("E{}", kp.corner_index),
                corners[kp.corner_index],
                kp.center_point(),
            )
        })
        .collect();
    if pairs.len() < 4 {
        return Err(PnpError::TooFewPoints(pairs.len()));
    }
    calibrate(
        CalibrationKind::EventLidar,
        CorrespondenceSet::new(pairs, *k),
        options,
    )
}

/// Joins LiDAR marker corners with image corners `(A-index, pixel)`.
pub fn calibrate_rgb_lidar(
    aruco_corners: &[Point3],
    detections: &[(usize, Point2)],
    k: &CameraIntrinsics,
    options: &PnpOptions,
) -> Result<Calibration, PnpError> {
    let mut dets: Vec<&(usize, Point2)> = detections
        .iter()
        .filter(|(i, _)| *i < aruco_corners.len())
        .collect();
    dets.sort_by_key(|d| d.0);
    let pairs: Vec<Correspondence> = dets
        .iter()
        .map(|(i, px)| Correspondence::new(format!("A{i}"), aruco_corners[*i], *px))
        .collect();
    if pairs.len() < 4 {
        return Err(PnpError::TooFewPoints(pairs.len()));
    }
    calibrate(
        CalibrationKind::RgbLidar,
        CorrespondenceSet::new(pairs, *k),
        options,
    )
}

/// Unweighted mean of `E_mean` per calibration kind.
pub fn aggregate_by_type(
    entries: &[(CalibrationKind, ReprojectionStats)],
) -> BTreeMap<CalibrationKind, f64> {
    let mut acc: BTreeMap<CalibrationKind, (f64, usize)> = BTreeMap::new();
    for (kind, stats) in entries {
        let e = acc.entry(*kind).or_insert((0.0, 0));
        e.0 += stats.mean_px;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}
