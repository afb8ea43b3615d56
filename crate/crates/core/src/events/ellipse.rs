//! Direct least-squares ellipse fit with the `4AC - B² = 1` constraint,
//! in the numerically stable block form (scatter matrix split into
//! quadratic and linear parts, reduced 3×3 eigenproblem).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::EventError;
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis in radians, in `(-π/2, π/2]`.
    pub angle: f64,
}

impl Ellipse {
    pub fn center_point(&self) -> Point2 {
        Point2::new(self.center[0], self.center[1])
    }

    pub fn point_at(&self, theta: f64) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (self.semi_major * theta.cos(), self.semi_minor * theta.sin());
        Point2::new(
            self.center[0] + a * c - b * s,
            self.center[1] + a * s + b * c,
        )
    }
}

/// Conic `A x² + B xy + C y² + D x + E y + F = 0` to center/axes/angle.
fn conic_to_ellipse(k: [f64; 6]) -> Option<Ellipse> {
    let [a, b, c, d, e, f] = k;
    let m = Matrix2::new(2.0 * a, b, b, 2.0 * c);
    let center = m.try_inverse()? * Vector2::new(-d, -e);
    let (x0, y0) = (center.x, center.y);
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    let q = Matrix2::new(a, 0.5 * b, 0.5 * b, c).symmetric_eigen();
    let (l1, l2) = (q.eigenvalues[0], q.eigenvalues[1]);
    let r1 = -f0 / l1;
    let r2 = -f0 / l2;
    if !(r1 > 0.0 && r2 > 0.0) {
        return None;
    }
    let (major_idx, semi_major, semi_minor) = if r1 >= r2 {
        (0, r1.sqrt(), r2.sqrt())
    } else {
        (1, r2.sqrt(), r1.sqrt())
    };
    let axis = q.eigenvectors.column(major_idx);
    let mut angle = axis[1].atan2(axis[0]);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    } else if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    Some(Ellipse {
        center: [x0, y0],
        semi_major,
        semi_minor,
        angle,
    })
}

pub fn fit_ellipse(points: &[Point2]) -> Result<Ellipse, EventError> {
    if points.len() < 6 {
        return Err(EventError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (mx, my) = (mx / n, my / n);
    let spread = (points
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(EventError::DegenerateConfiguration);
    }
    let s = spread / std::f64::consts::SQRT_2;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p.x - mx) / s, (p.y - my) / s);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }

    let sv = s3.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(EventError::DegenerateConfiguration);
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or(EventError::DegenerateConfiguration)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[m.row(2) * 0.5, -m.row(1), m.row(0) * 0.5]);

    let eig = reduced.complex_eigenvalues();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in eig.iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let Some(v_t) = svd.v_t else { continue };
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("3 singular values");
        let a1: Vector3<f64> = v_t.row(imin).transpose();
        let cond = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if cond > 0.0 && best.as_ref().is_none_or(|(c, _)| cond > *c) {
            best = Some((cond, a1));
        }
    }
    let (_, a1) = best.ok_or(EventError::DegenerateConfiguration)?;
    let a2 = t * a1;
    let conic = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let e = conic_to_ellipse(conic).ok_or(EventError::DegenerateConfiguration)?;
    Ok(Ellipse {
        center: [e.center[0] * s + mx, e.center[1] * s + my],
        semi_major: e.semi_major * s,
        semi_minor: e.semi_minor * s,
        angle: e.angle,
    })
}
