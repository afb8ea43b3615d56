//! ArUco marker corners in a grayscale frame, matched by ID to the target
//! layout.

mod refine;
pub mod render;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use refine::{refine_corners, RefinedCorner};
use render::{apply_homography, homography_from_4, UNIT_SQUARE};

use crate::dictionary::Dictionary;
use crate::geometry::Point2;
use crate::target::TargetSpec;

#[derive(Debug, Error)]
pub enum RgbError {
    #[error("image buffer has {got} bytes, expected {expected}")]
    BadBuffer { expected: usize, got: usize },
    #[error("cannot parse detections: {0}")]
    Parse(String),
    #[error("detection for marker {0} violates the quad/ID invariants")]
    InvariantViolation(u16),
    #[error("marker {0} is not part of the target")]
    UnknownMarkerId(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RgbError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RgbError::BadBuffer {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    /// Bilinear interpolation with pixel centers at integer coordinates,
    /// clamped at the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |x, y| self.get(x, y) as f64;
        (p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx) * (1.0 - fy)
            + (p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx) * fy
    }

    /// Applies `v -> gain * v + offset`, saturating to `[0, 255]`.
    pub fn affine(&self, gain: f64, offset: f64) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|&v| (gain * v as f64 + offset).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// A decoded marker; corners start at the marker's own top-left and run
/// clockwise in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub id: u16,
    #[serde(with = "corner_arrays")]
    pub corners: [Point2; 4],
}

mod corner_arrays {
    use super::Point2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &[Point2; 4], s: S) -> Result<S::Ok, S::Error> {
        let arr: [[f64; 2]; 4] = [
            [c[0].x, c[0].y],
            [c[1].x, c[1].y],
            [c[2].x, c[2].y],
            [c[3].x, c[3].y],
        ];
        arr.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Point2; 4], D::Error> {
        let arr = <[[f64; 2]; 4]>::deserialize(d)?;
        Ok(arr.map(|[x, y]| Point2::new(x, y)))
    }
}

/// Twice the signed area; positive for clockwise order in image
/// coordinates (y down).
fn signed_area2(q: &[Point2; 4]) -> f64 {
    (0..4)
        .map(|i| {
            let (a, b) = (q[i], q[(i + 1) % 4]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

pub fn quad_area(q: &[Point2; 4]) -> f64 {
    0.5 * signed_area2(q).abs()
}

/// True for a strictly convex quad with clockwise (image) orientation.
pub fn is_convex_clockwise(q: &[Point2; 4]) -> bool {
    (0..4).all(|i| {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        let (d1, d2) = (b - a, c - b);
        d1.x * d2.y - d1.y * d2.x > 0.0
    })
}

impl MarkerDetection {
    pub fn area(&self) -> f64 {
        quad_area(&self.corners)
    }

    pub fn check(&self, dict: &Dictionary) -> Result<(), RgbError> {
        let finite = self
            .corners
            .iter()
            .all(|c| c.x.is_finite() && c.y.is_finite());
        if !finite || (self.id as usize) >= dict.len() || !is_convex_clockwise(&self.corners) {
            return Err(RgbError::InvariantViolation(self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Side of the square averaging window for the adaptive threshold.
    pub threshold_window: u32,
    /// A pixel is dark when it is below the local mean minus this value.
    pub threshold_offset: f64,
    pub max_hamming: u32,
    pub min_side_px: f64,
    /// Refine coarse quads by fitting lines to subpixel edge points.
    pub subpixel_edges: bool,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold_window: 15,
            threshold_offset: 7.0,
            max_hamming: 1,
            min_side_px: 10.0,
            subpixel_edges: true,
        }
    }
}

/// Dark-pixel mask: `I < mean(window) - offset`.
pub fn adaptive_threshold(img: &GrayImage, window: u32, offset: f64) -> Vec<bool> {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut integral = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += img.data[y * w + x] as u64;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let r = (window / 2) as usize;
    let mut mask = vec![false; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let sum = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            let mean = sum as f64 / ((y1 - y0) * (x1 - x0)) as f64;
            mask[y * w + x] = (img.data[y * w + x] as f64) < mean - offset;
        }
    }
    mask
}

/// 8-connected components of `mask` with at least `min_size` pixels.
fn components(mask: &[bool], w: usize, h: usize, min_size: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if comp.len() >= min_size {
            out.push(comp);
        }
    }
    out
}

/// Coarse quad from the extreme pixels of a component: the farthest pixel
/// from the centroid, the farthest from that one, and the farthest on each
/// side of the diagonal they span.
fn extreme_quad(pixels: &[(usize, usize)]) -> Option<[Point2; 4]> {
    let pts: Vec<Point2> = pixels
        .iter()
        .map(|&(x, y)| Point2::new(x as f64, y as f64))
        .collect();
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let farthest = |from: Vector2<f64>| {
        pts.iter().copied().max_by(|a, b| {
            (a.coords - from)
                .norm_squared()
                .total_cmp(&(b.coords - from).norm_squared())
        })
    };
    let p0 = farthest(c)?;
    let p1 = farthest(p0.coords)?;
    let d = p1 - p0;
    let side = |p: &Point2| d.x * (p.y - p0.y) - d.y * (p.x - p0.x);
    let pa = pts
        .iter()
        .copied()
        .max_by(|a, b| side(a).total_cmp(&side(b)))?;
    let pb = pts
        .iter()
        .copied()
        .min_by(|a, b| side(a).total_cmp(&side(b)))?;
    if side(&pa) <= 0.0 || side(&pb) >= 0.0 {
        return None;
    }
    let mut q = [p0, pa, p1, pb];
    if signed_area2(&q) < 0.0 {
        q = [p0, pb, p1, pa];
    }
    Some(q)
}

struct Line {
    point: Vector2<f64>,
    dir: Vector2<f64>,
}

fn fit_line(pts: &[Vector2<f64>]) -> Option<Line> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix2::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        0
    } else {
        1
    };
    Some(Line {
        point: c,
        dir: eig.eigenvectors.column(i).into_owned(),
    })
}

fn intersect(a: &Line, b: &Line) -> Option<Point2> {
    let m = Matrix2::from_columns(&[a.dir, -b.dir]);
    let s = m.try_inverse()? * (b.point - a.point);
    Some(Point2::from(a.point + a.dir * s[0]))
}

/// Moves each side of a clockwise quad onto the dark→light transition found
/// along its outward normal, then re-intersects the sides.
fn refine_quad_edges(img: &GrayImage, quad: &[Point2; 4], reach: f64) -> Option<[Point2; 4]> {
    let step = 0.05;
    let mut lines = Vec::with_capacity(4);
    for i in 0..4 {
        let (a, b) = (quad[i], quad[(i + 1) % 4]);
        let len = (b - a).norm();
        let dir = (b - a) / len;
        let normal = Vector2::new(dir.y, -dir.x);
        let samples = (len * 0.6).ceil().max(4.0) as usize;
        let mut pts = Vec::with_capacity(samples);
        for k in 0..=samples {
            let t = 0.2 + 0.6 * k as f64 / samples as f64;
            let p = a + (b - a) * t;
            let prof = |s: f64| {
                let q = p + normal * s;
                img.sample(q.x, q.y)
            };
            let (lo, hi) = (prof(-reach), prof(reach));
            if hi - lo < 10.0 {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let mut s = -reach;
            let mut prev = lo;
            while s < reach {
                let next = prof(s + step);
                if prev < mid && next >= mid {
                    let f = (mid - prev) / (next - prev);
                    pts.push((p + normal * (s + f * step)).coords);
                    break;
                }
                prev = next;
                s += step;
            }
        }
        lines.push(fit_line(&pts)?);
    }
    let mut out = [Point2::origin(); 4];
    for i in 0..4 {
        out[i] = intersect(&lines[(i + 3) % 4], &lines[i])?;
    }
    Some(out)
}

/// Samples the printed cell grid through the quad's homography. Returns
/// the data code with the quad's first corner taken as top-left, or `None`
/// when the border is not dark or the contrast is too low.
fn read_bits(img: &GrayImage, quad: &[Point2; 4], dict: &Dictionary) -> Option<u16> {
    let h = homography_from_4(&UNIT_SQUARE, quad)?;
    let n = dict.bits + 2;
    let mut cells = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for dy in [-0.25, 0.0, 0.25] {
                for dx in [-0.25, 0.0, 0.25] {
                    let q = Point2::new(
                        (c as f64 + 0.5 + dx) / n as f64,
                        (r as f64 + 0.5 + dy) / n as f64,
                    );
                    let p = apply_homography(&h, &q);
                    acc += img.sample(p.x, p.y);
                }
            }
            cells[r * n + c] = acc / 9.0;
        }
    }
    let border: Vec<f64> = (0..n * n)
        .filter(|i| {
            let (r, c) = (i / n, i % n);
            r == 0 || c == 0 || r == n - 1 || c == n - 1
        })
        .map(|i| cells[i])
        .collect();
    let mut sorted = border.clone();
    sorted.sort_by(f64::total_cmp);
    let dark = sorted[sorted.len() / 2];
    let light = cells.iter().copied().fold(f64::MIN, f64::max);
    if light - dark < 20.0 {
        return None;
    }
    let thr = 0.5 * (dark + light);
    if border.iter().filter(|&&v| v > thr).count() > 1 {
        return None;
    }
    let b = dict.bits;
    let mut code = 0u16;
    for r in 0..b {
        for c in 0..b {
            if cells[(r + 1) * n + c + 1] > thr {
                code |= 1 << (b * b - 1 - (r * b + c));
            }
        }
    }
    Some(code)
}

/// Finds and decodes all markers of `dict` in `img`. At most one detection
/// per ID survives (the one with the larger quad).
pub fn detect_markers(
    img: &GrayImage,
    dict: &Dictionary,
    params: &DetectorParams,
) -> Vec<MarkerDetection> {
    if img.width.min(img.height) < 32 {
        return Vec::new();
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let mask = adaptive_threshold(img, params.threshold_window, params.threshold_offset);
    let min_pixels = (2.0 * params.min_side_px) as usize;
    let mut best: BTreeMap<u16, MarkerDetection> = BTreeMap::new();
    for comp in components(&mask, w, h, min_pixels) {
        let touches = comp
            .iter()
            .any(|&(x, y)| x == 0 || y == 0 || x + 1 == w || y + 1 == h);
        if touches {
            continue;
        }
        let Some(mut quad) = extreme_quad(&comp) else {
            continue;
        };
        let min_side = (0..4)
            .map(|i| (quad[(i + 1) % 4] - quad[i]).norm())
            .fold(f64::MAX, f64::min);
        if min_side < params.min_side_px || !is_convex_clockwise(&quad) {
            continue;
        }
        if params.subpixel_edges {
            let cell = min_side / (dict.bits + 2) as f64;
            let mut reach = (0.4 * cell).clamp(1.5, 4.0);
            for _ in 0..2 {
                match refine_quad_edges(img, &quad, reach) {
                    Some(q) if is_convex_clockwise(&q) => quad = q,
                    _ => break,
                }
                reach = (0.25 * cell).clamp(1.0, 2.0);
            }
        }
        let Some(code) = read_bits(img, &quad, dict) else {
            continue;
        };
        let Some(m) = dict.lookup(code, params.max_hamming) else {
            continue;
        };
        // observed = stored rotated `rotation` times clockwise: the true
        // top-left sits `rotation` positions further along our ordering
        let r = m.rotation as usize;
        let corners = [
            quad[r % 4],
            quad[(r + 1) % 4],
            quad[(r + 2) % 4],
            quad[(r + 3) % 4],
        ];
        let det = MarkerDetection { id: m.id, corners };
        if best.get(&m.id).is_none_or(|prev| det.area() > prev.area()) {
            best.insert(m.id, det);
        }
    }
    // a quad whose center lies inside a larger detection is decoded from
    // that marker's own bit pattern
    let all: Vec<MarkerDetection> = best.into_values().collect();
    all.iter()
        .filter(|d| {
            let c = quad_center(&d.corners);
            !all.iter()
                .any(|o| o.area() > d.area() && point_in_convex_quad(&o.corners, &c))
        })
        .cloned()
        .collect()
}

fn quad_center(q: &[Point2; 4]) -> Point2 {
    Point2::new(
        q.iter().map(|p| p.x).sum::<f64>() / 4.0,
        q.iter().map(|p| p.y).sum::<f64>() / 4.0,
    )
}

/// `q` clockwise in image coordinates (y down).
fn point_in_convex_quad(q: &[Point2; 4], p: &Point2) -> bool {
    (0..4).all(|i| {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

/// Reads a JSON array of `{id, corners: [[x, y]; 4]}` and checks each entry.
pub fn load_external_detections(
    path: &Path,
    dict: &Dictionary,
) -> Result<Vec<MarkerDetection>, RgbError> {
    let text = std::fs::read_to_string(path)?;
    parse_external_detections(&text, dict)
}

pub fn parse_external_detections(
    text: &str,
    dict: &Dictionary,
) -> Result<Vec<MarkerDetection>, RgbError> {
    let dets: Vec<MarkerDetection> =
        serde_json::from_str(text).map_err(|e| RgbError::Parse(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for d in &dets {
        d.check(dict)?;
        if !seen.insert(d.id) {
            return Err(RgbError::InvariantViolation(d.id));
        }
    }
    Ok(dets)
}

/// Maps each detected corner to its global index `4 * slot + corner`,
/// sorted by index.
pub fn match_to_target(
    detections: &[MarkerDetection],
    spec: &TargetSpec,
) -> Result<Vec<(usize, Point2)>, RgbError> {
    let mut out = BTreeMap::new();
    for d in detections {
        let slot = spec
            .marker_slot(d.id)
            .ok_or(RgbError::UnknownMarkerId(d.id))?;
        for (c, p) in d.corners.iter().enumerate() {
            out.entry(4 * slot + c).or_insert(*p);
        }
    }
    Ok(out.into_iter().collect())
}
