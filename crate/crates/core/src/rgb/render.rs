//! Minimal marker rasterizer used by the simulator and the detector tests.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::dictionary::Dictionary;
use crate::geometry::Point2;

/// Printed marker side in cells: data bits plus a one-cell black border.
pub fn cells_per_side(dict: &Dictionary) -> usize {
    dict.bits + 2
}

/// Color of marker `id` at normalized marker coordinates `(mu, mv)` in
/// `[0, 1)²` (u to the right, v down): `Some(true)` for white cells,
/// `Some(false)` for black, `None` outside the marker.
pub fn marker_cell(dict: &Dictionary, id: u16, mu: f64, mv: f64) -> Option<bool> {
    if !(0.0..1.0).contains(&mu) || !(0.0..1.0).contains(&mv) {
        return None;
    }
    let n = cells_per_side(dict);
    let col = (mu * n as f64) as usize;
    let row = (mv * n as f64) as usize;
    if row == 0 || col == 0 || row == n - 1 || col == n - 1 {
        return Some(false);
    }
    let code = dict.code(id)?;
    let b = dict.bits;
    let bit = (row - 1) * b + (col - 1);
    Some((code >> (b * b - 1 - bit)) & 1 == 1)
}

/// Homography mapping `src[i]` to `dst[i]` for four point pairs.
pub fn homography_from_4(src: &[Point2; 4], dst: &[Point2; 4]) -> Option<Matrix3<f64>> {
    let mut a = nalgebra::SMatrix::<f64, 8, 8>::zeros();
    let mut b = nalgebra::SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        a.fixed_view_mut::<1, 8>(2 * i, 0).copy_from_slice(&[
            x,
            y,
            1.0,
            0.0,
            0.0,
            0.0,
            -u * x,
            -u * y,
        ]);
        a.fixed_view_mut::<1, 8>(2 * i + 1, 0).copy_from_slice(&[
            0.0,
            0.0,
            0.0,
            x,
            y,
            1.0,
            -v * x,
            -v * y,
        ]);
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    Some(Matrix3::new(
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
    ))
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Point2) -> Point2 {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(q.x / q.z, q.y / q.z)
}

pub const UNIT_SQUARE: [Point2; 4] = [
    Point2::new(0.0, 0.0),
    Point2::new(1.0, 0.0),
    Point2::new(1.0, 1.0),
    Point2::new(0.0, 1.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderStyle {
    pub dark: u8,
    pub light: u8,
    /// Samples per pixel side. `1` is plain nearest-neighbour sampling at
    /// the pixel center; larger values box-filter the scene.
    pub supersample: u32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            dark: 20,
            light: 230,
            supersample: 1,
        }
    }
}

impl RenderStyle {
    /// Renders a scene given as a function from continuous pixel position
    /// (pixel centers at integer coordinates) to "is white".
    pub fn rasterize<F>(&self, width: u32, height: u32, scene: F) -> GrayImage
    where
        F: Fn(f64, f64) -> bool + Sync,
    {
        let s = self.supersample.max(1);
        let offsets: Vec<f64> = (0..s).map(|i| (i as f64 + 0.5) / s as f64 - 0.5).collect();
        let total = (s * s) as f64;
        let (dark, light) = (self.dark as f64, self.light as f64);
        let mut data = vec![self.light; width as usize * height as usize];
        data.par_chunks_mut(width.max(1) as usize)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, px) in row.iter_mut().enumerate() {
                    let mut white = 0u32;
                    for dy in &offsets {
                        for dx in &offsets {
                            if scene(x as f64 + dx, y as f64 + dy) {
                                white += 1;
                            }
                        }
                    }
                    let frac = white as f64 / total;
                    *px = (dark + (light - dark) * frac).round() as u8;
                }
            });
        GrayImage {
            width,
            height,
            data,
        }
    }
}

/// A marker placed in the image by its four corners (TL, TR, BR, BL).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedMarker {
    pub id: u16,
    pub corners: [Point2; 4],
}

/// Renders flat markers over a white background.
pub fn render_planar_markers(
    width: u32,
    height: u32,
    markers: &[PlacedMarker],
    dict: &Dictionary,
    style: &RenderStyle,
) -> GrayImage {
    let inv: Vec<Option<(u16, Matrix3<f64>, [f64; 4])>> = markers
        .iter()
        .map(|m| {
            let h = homography_from_4(&UNIT_SQUARE, &m.corners)?.try_inverse()?;
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for c in &m.corners {
                x0 = x0.min(c.x);
                y0 = y0.min(c.y);
                x1 = x1.max(c.x);
                y1 = y1.max(c.y);
            }
            Some((m.id, h, [x0, y0, x1, y1]))
        })
        .collect();
    style.rasterize(width, height, |x, y| {
        for (id, h, bb) in inv.iter().flatten() {
            if x < bb[0] || x > bb[2] || y < bb[1] || y > bb[3] {
                continue;
            }
            let q = apply_homography(h, &Point2::new(x, y));
            if let Some(white) = marker_cell(dict, *id, q.x, q.y) {
                return white;
            }
        }
        true
    })
}
