//! Rigid transforms, pinhole projection with Brown–Conrady distortion and
//! plane primitives shared by every feature extractor.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Points closer than this to the image plane are rejected by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

const UNDISTORT_MAX_ITERS: usize = 50;
const UNDISTORT_TOL_PX: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z:e})")]
    BehindCamera { z: f64 },
    #[error("undistortion did not converge after {UNDISTORT_MAX_ITERS} iterations")]
    NoConvergence,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid transform `x -> R x + t`, with the rotation kept as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a rotation matrix. The matrix is projected onto SO(3)
    /// first, so slightly non-orthonormal input is accepted.
    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix(rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Geodesic distance between the two rotations, in radians.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Normalizes `q` unless it is already unit to within rounding, in
    /// which case the stored bits are kept so records round-trip exactly.
    pub fn from_quaternion_wxyz(q: [f64; 4], translation: Vector3<f64>) -> Pose {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let rotation = if (quat.norm() - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        Pose::new(rotation, translation)
    }
}

/// Serialized form of a [`Pose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation_quaternion_wxyz: [f64; 4],
    pub translation_m: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        Self {
            rotation_quaternion_wxyz: p.quaternion_wxyz(),
            translation_m: p.translation.into(),
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = String;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        let q = r.rotation_quaternion_wxyz;
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 1e-12) || r.translation_m.iter().any(|v| !v.is_finite()) {
            return Err(format!("invalid pose record {r:?}"));
        }
        Ok(Pose::from_quaternion_wxyz(q, r.translation_m.into()))
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Pinhole camera with 5-coefficient Brown–Conrady distortion
/// (`k1, k2, p1, p2, k3`, OpenCV ordering).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub dist: [f64; 5],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            dist: [0.0; 5],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside the image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside the image");
        }
        if self.dist.iter().any(|d| !d.is_finite()) {
            return bad("non-finite distortion coefficient");
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&d| d != 0.0)
    }

    /// Applies the distortion model to normalized image coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Normalized (distorted) coordinates to pixels.
    pub fn to_pixel(&self, xd: f64, yd: f64) -> Point2 {
        Point2::new(self.fx * xd + self.cx, self.fy * yd + self.cy)
    }

    /// Pixel to normalized undistorted coordinates.
    pub fn normalize(&self, p: &Point2) -> Result<(f64, f64), GeometryError> {
        let xd = (p.x - self.cx) / self.fx;
        let yd = (p.y - self.cy) / self.fy;
        if !self.has_distortion() {
            return Ok((xd, yd));
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let [k1, k2, p1, p2, k3] = self.dist;
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
            let (rx, ry) = self.distort_normalized(x, y);
            let err = ((rx - xd) * self.fx).hypot((ry - yd) * self.fy);
            if err < UNDISTORT_TOL_PX {
                return Ok((x, y));
            }
        }
        Err(GeometryError::NoConvergence)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// Projects a point given in the source frame into pixels of a camera whose
/// pose relative to the source frame is `pose`.
pub fn project(x: &Point3, pose: &Pose, k: &CameraIntrinsics) -> Result<Point2, GeometryError> {
    project_camera_frame(&pose.transform_point(x), k)
}

pub fn project_camera_frame(pc: &Point3, k: &CameraIntrinsics) -> Result<Point2, GeometryError> {
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    let (xd, yd) = k.distort_normalized(pc.x / pc.z, pc.y / pc.z);
    Ok(k.to_pixel(xd, yd))
}

/// Removes lens distortion from a pixel, returning the pixel an ideal
/// pinhole camera with the same `fx, fy, cx, cy` would observe.
pub fn undistort(p: &Point2, k: &CameraIntrinsics) -> Result<Point2, GeometryError> {
    let (x, y) = k.normalize(p)?;
    Ok(Point2::new(k.fx * x + k.cx, k.fy * y + k.cy))
}

/// Plane `normal · X = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        let n = normal.norm();
        Self {
            normal: Unit::new_unchecked(normal / n),
            offset: offset / n,
        }
    }

    pub fn from_point_normal(point: &Point3, normal: Vector3<f64>) -> Self {
        let n = Unit::new_normalize(normal);
        Self {
            offset: n.dot(&point.coords),
            normal: n,
        }
    }

    /// Plane through three points, `None` when they are (nearly) collinear.
    pub fn through(a: &Point3, b: &Point3, c: &Point3) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        let scale = (b - a).norm().max((c - a).norm());
        if len <= 1e-12 * scale * scale || !len.is_finite() {
            return None;
        }
        Some(Self::from_point_normal(a, n / len))
    }

    /// Total least-squares plane through `points` (smallest principal axis).
    pub fn fit<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Point3>,
    {
        let pts: Vec<&Point3> = points.into_iter().collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let mut cov = Matrix3::zeros();
        for p in &pts {
            let d = p.coords - centroid;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        let normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
        if !normal.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self::from_point_normal(&Point3::from(centroid), normal))
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }
}

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
