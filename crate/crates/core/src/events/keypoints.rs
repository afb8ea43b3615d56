use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{fit_ellipse, BoundingBox, Ellipse, EventError, FrequencyMap};
use crate::geometry::Point2;
use crate::target::{TargetSpec, NUM_LEDS};

/// PnP needs at least this many LEDs.
pub const MIN_LEDS: usize = 4;

/// Matching window around each nominal LED frequency:
/// `max(abs_hz, rel * nominal)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTolerance {
    pub abs_hz: f64,
    pub rel: f64,
}

impl Default for FrequencyTolerance {
    fn default() -> Self {
        Self {
            abs_hz: 2.0,
            rel: 0.05,
        }
    }
}

impl FrequencyTolerance {
    pub fn fixed(hz: f64) -> Self {
        Self {
            abs_hz: hz,
            rel: 0.0,
        }
    }

    pub fn at(&self, nominal_hz: f64) -> f64 {
        self.abs_hz.max(self.rel * nominal_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedKeypoint {
    pub corner_index: usize,
    pub center: [f64; 2],
    pub ellipse: Option<Ellipse>,
    /// Mean frequency over the LED's pixels.
    pub frequency: f64,
    pub pixel_count: usize,
    /// Set when the ellipse fit failed and `center` is the mask centroid.
    pub degraded: bool,
}

impl LedKeypoint {
    pub fn center_point(&self) -> Point2 {
        Point2::new(self.center[0], self.center[1])
    }
}

const NEIGHBORS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Largest 8-connected component of `mask` (row-major, `w × h`).
fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as i32, (i / w) as i32);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Fits one ellipse per configured LED frequency inside `bbox` of the
/// selected map. The mask of an LED is the largest 8-connected group of
/// pixels whose frequency is within tolerance of the nominal value; its
/// boundary pixels (at least one 8-neighbour outside the mask) feed the fit.
pub fn extract_led_keypoints(
    map: &FrequencyMap,
    bbox: &BoundingBox,
    spec: &TargetSpec,
    tolerance: &FrequencyTolerance,
) -> Result<Vec<LedKeypoint>, EventError> {
    let (w, h) = (bbox.width() as usize, bbox.height() as usize);
    let mut keypoints = Vec::new();
    let mut missing = Vec::new();
    for (corner, &nominal) in spec.led_frequencies_hz.iter().enumerate().take(NUM_LEDS) {
        let tol = tolerance.at(nominal);
        let mask: Vec<bool> = (0..w * h)
            .map(|i| {
                let v = map.get(bbox.min_x + (i % w) as u32, bbox.min_y + (i / w) as u32) as f64;
                v != 0.0 && (v - nominal).abs() <= tol
            })
            .collect();
        let comp = largest_component(&mask, w, h);
        if comp.len() < 3 {
            missing.push(corner);
            continue;
        }
        let mut in_comp = vec![false; w * h];
        for &i in &comp {
            in_comp[i] = true;
        }
        let to_px = |i: usize| {
            Point2::new(
                (bbox.min_x as usize + i % w) as f64,
                (bbox.min_y as usize + i / w) as f64,
            )
        };
        let boundary: Vec<Point2> = comp
            .iter()
            .copied()
            .filter(|&i| {
                let (x, y) = ((i % w) as i32, (i / w) as i32);
                NEIGHBORS.iter().any(|(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx < 0
                        || ny < 0
                        || nx >= w as i32
                        || ny >= h as i32
                        || !in_comp[ny as usize * w + nx as usize]
                })
            })
            .map(to_px)
            .collect();

        let n = comp.len() as f64;
        let centroid = comp
            .iter()
            .fold(Point2::origin(), |acc, &i| acc + to_px(i).coords / n);
        let frequency = comp
            .iter()
            .map(|&i| map.get(bbox.min_x + (i % w) as u32, bbox.min_y + (i / w) as u32) as f64)
            .sum::<f64>()
            / n;

        // the fitted center must stay within the blob's pixel extent
        let (lo, hi) = comp.iter().fold(
            (
                Point2::new(f64::MAX, f64::MAX),
                Point2::new(f64::MIN, f64::MIN),
            ),
            |(lo, hi), &i| {
                let p = to_px(i);
                (
                    Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        );
        let fitted = fit_ellipse(&boundary).ok().filter(|e| {
            e.center[0] >= lo.x - 1.0
                && e.center[0] <= hi.x + 1.0
                && e.center[1] >= lo.y - 1.0
                && e.center[1] <= hi.y + 1.0
        });
        keypoints.push(match fitted {
            Some(e) => LedKeypoint {
                corner_index: corner,
                center: e.center,
                ellipse: Some(e),
                frequency,
                pixel_count: comp.len(),
                degraded: false,
            },
            None => LedKeypoint {
                corner_index: corner,
                center: [centroid.x, centroid.y],
                ellipse: None,
                frequency,
                pixel_count: comp.len(),
                degraded: true,
            },
        });
    }
    if keypoints.len() < MIN_LEDS {
        return Err(EventError::MissingLeds {
            found: keypoints.len(),
            missing,
        });
    }
    Ok(keypoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::active_bbox;

    fn blob_map(centers: &[(f64, f64, f64)], radius: f64) -> FrequencyMap {
        let mut map = FrequencyMap::zeros(200, 120, (0, 1));
        for &(cx, cy, f) in centers {
            for y in 0..120u32 {
                for x in 0..200u32 {
                    if (x as f64 - cx).hypot(y as f64 - cy) <= radius {
                        map.set(x, y, f as f32);
                    }
                }
            }
        }
        map
    }

    fn seven_centers() -> Vec<(f64, f64, f64)> {
        let spec = TargetSpec::default();
        spec.led_frequencies_hz
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                (
                    20.3 + 25.0 * i as f64,
                    40.0 + 30.0 * (i % 2) as f64 + 0.37 * i as f64,
                    f + 0.4,
                )
            })
            .collect()
    }

    #[test]
    fn seven_blobs() {
        let centers = seven_centers();
        let map = blob_map(&centers, 6.0);
        let bbox = active_bbox(&map).unwrap();
        let kps = extract_led_keypoints(
            &map,
            &bbox,
            &TargetSpec::default(),
            &FrequencyTolerance::default(),
        )
        .unwrap();
        assert_eq!(kps.len(), 7);
        for kp in &kps {
            let (cx, cy, _) = centers[kp.corner_index];
            let err = (kp.center[0] - cx).hypot(kp.center[1] - cy);
            assert!(err < 0.5, "corner {} error {err}", kp.corner_index);
            assert!(!kp.degraded);
        }
        let mut idx: Vec<usize> = kps.iter().map(|k| k.corner_index).collect();
        idx.dedup();
        assert_eq!(idx.len(), 7);
    }

    #[test]
    fn missing_frequency() {
        let mut centers = seven_centers();
        centers.remove(3);
        let map = blob_map(&centers, 6.0);
        let bbox = active_bbox(&map).unwrap();
        let kps = extract_led_keypoints(
            &map,
            &bbox,
            &TargetSpec::default(),
            &FrequencyTolerance::default(),
        )
        .unwrap();
        assert_eq!(kps.len(), 6);
        assert!(kps.iter().all(|k| k.corner_index != 3));
    }

    #[test]
    fn three_blobs_are_not_enough() {
        let centers: Vec<_> = seven_centers().into_iter().take(3).collect();
        let map = blob_map(&centers, 6.0);
        let bbox = active_bbox(&map).unwrap();
        let err = extract_led_keypoints(
            &map,
            &bbox,
            &TargetSpec::default(),
            &FrequencyTolerance::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            EventError::MissingLeds {
                found: 3,
                missing: vec![3, 4, 5, 6]
            }
        );
    }

    #[test]
    fn tiny_blob_falls_back_to_centroid() {
        let mut map = FrequencyMap::zeros(50, 50, (0, 1));
        let spec = TargetSpec::default();
        for (i, f) in spec.led_frequencies_hz.iter().enumerate() {
            let x = 3 + 6 * i as u32;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                map.set(x + dx, 10 + dy, *f as f32);
            }
        }
        let bbox = active_bbox(&map).unwrap();
        let kps =
            extract_led_keypoints(&map, &bbox, &spec, &FrequencyTolerance::default()).unwrap();
        assert_eq!(kps.len(), 7);
        for kp in &kps {
            assert!(kp.degraded);
            assert_eq!(kp.center[1], 10.5);
        }
    }

    #[test]
    fn tolerance() {
        let t = FrequencyTolerance::default();
        assert_eq!(t.at(25.0), 2.0);
        assert!((t.at(175.0) - 8.75).abs() < 1e-12);
    }
}
