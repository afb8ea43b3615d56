use nalgebra::{Matrix2, Vector2};

use super::GrayImage;
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedCorner {
    pub point: Point2,
    /// False when the corner was returned unchanged (no gradient structure,
    /// too close to the border, or the iteration ran away).
    pub converged: bool,
}

/// Gradient-based corner refinement: finds `q` minimising
/// `Σ w (g_pᵀ (p - q))²` over the window, i.e. the point every edge
/// gradient in the neighbourhood is orthogonal to.
pub fn refine_corners(img: &GrayImage, corners: &[Point2], window: u32) -> Vec<RefinedCorner> {
    corners.iter().map(|c| refine_one(img, c, window)).collect()
}

fn refine_one(img: &GrayImage, start: &Point2, window: u32) -> RefinedCorner {
    let unchanged = RefinedCorner {
        point: *start,
        converged: false,
    };
    let r = window as f64;
    let margin = r + 2.0;
    if start.x < margin
        || start.y < margin
        || start.x > img.width as f64 - 1.0 - margin
        || start.y > img.height as f64 - 1.0 - margin
    {
        return unchanged;
    }
    let sigma = 0.5 * r;
    let mut q = start.coords;
    for _ in 0..50 {
        let mut a = Matrix2::zeros();
        let mut b = Vector2::zeros();
        // gradients on the pixel grid around the current estimate
        let ri = window as i64;
        let (qx, qy) = (q.x.round() as i64, q.y.round() as i64);
        if qx - ri < 1
            || qy - ri < 1
            || qx + ri + 1 >= img.width as i64
            || qy + ri + 1 >= img.height as i64
        {
            return unchanged;
        }
        for py in qy - ri..=qy + ri {
            for px in qx - ri..=qx + ri {
                let (x, y) = (px as u32, py as u32);
                let gx = 0.5 * (img.get(x + 1, y) as f64 - img.get(x - 1, y) as f64);
                let gy = 0.5 * (img.get(x, y + 1) as f64 - img.get(x, y - 1) as f64);
                let g = Vector2::new(gx, gy);
                let p = Vector2::new(px as f64, py as f64);
                let w = (-(p - q).norm_squared() / (2.0 * sigma * sigma)).exp();
                let gg = g * g.transpose() * w;
                a += gg;
                b += gg * p;
            }
        }
        let eig = a.symmetric_eigen();
        let (lmin, lmax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if !(lmax > 1e-6) || lmin < 1e-3 * lmax {
            return unchanged;
        }
        let Some(next) = a.try_inverse().map(|inv| inv * b) else {
            return unchanged;
        };
        let moved = (next - q).norm();
        q = next;
        if (q - start.coords).norm() > r {
            return unchanged;
        }
        if moved < 1e-3 {
            return RefinedCorner {
                point: Point2::from(q),
                converged: true,
            };
        }
    }
    RefinedCorner {
        point: Point2::from(q),
        converged: true,
    }
}
