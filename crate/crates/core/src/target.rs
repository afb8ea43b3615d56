//! The calibration cube: seven LED corners and a 3×3 ChArUco board on each
//! of the three faces meeting at the corner closest to the sensors.
//!
//! Canonical target frame: `E_0` (the corner shared by the three visible
//! faces) is the origin and the cube occupies `[0, L]³`, so the visible faces
//! are the planes `z = 0`, `x = 0` and `y = 0`. Each face carries a 2D frame
//! `(u, v)` with `u × v` pointing into the cube, which keeps a marker's
//! top-left → top-right → bottom-right order clockwise in any camera that
//! sees the face from outside.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::Dictionary;
use crate::geometry::Point3;

pub const NUM_LEDS: usize = 7;
pub const NUM_FACES: usize = 3;
pub const MARKERS_PER_FACE: usize = 5;
pub const NUM_MARKERS: usize = NUM_FACES * MARKERS_PER_FACE;
pub const NUM_ARUCO_CORNERS: usize = NUM_MARKERS * 4;

pub const LED_BAND_HZ: (f64, f64) = (10.0, 200.0);

/// Board cells (row, col) holding a marker on a 3×3 ChArUco face.
const MARKER_CELLS: [(usize, usize); MARKERS_PER_FACE] = [(0, 0), (0, 2), (1, 1), (2, 0), (2, 2)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("invalid target spec: {0}")]
    InvalidSpec(String),
    #[error("no LED within {tol} Hz of {freq} Hz")]
    NoMatch { freq: f64, tol: f64 },
    #[error("{freq} Hz matches LEDs {a} and {b}")]
    AmbiguousMatch { freq: f64, a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub edge_length_m: f64,
    pub led_frequencies_hz: [f64; NUM_LEDS],
    pub marker_side_m: f64,
    #[serde(default = "default_markers_per_face")]
    pub markers_per_face: usize,
    /// Dictionary IDs per face, in face order `[z = 0, x = 0, y = 0]`.
    pub marker_ids: [Vec<u16>; NUM_FACES],
    pub dictionary: String,
}

fn default_markers_per_face() -> usize {
    MARKERS_PER_FACE
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            edge_length_m: 0.5,
            led_frequencies_hz: [25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0],
            marker_side_m: 0.12,
            markers_per_face: MARKERS_PER_FACE,
            marker_ids: [(0..5).collect(), (5..10).collect(), (10..15).collect()],
            dictionary: Dictionary::ARUCO_4X4_50.to_string(),
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), TargetError> {
        let bad = |m: String| Err(TargetError::InvalidSpec(m));
        if !(self.edge_length_m > 0.0 && self.edge_length_m.is_finite()) {
            return bad(format!(
                "edge_length_m must be positive, got {}",
                self.edge_length_m
            ));
        }
        let (lo, hi) = LED_BAND_HZ;
        for (i, f) in self.led_frequencies_hz.iter().enumerate() {
            if !(*f >= lo && *f <= hi) {
                return bad(format!("LED {i} frequency {f} Hz outside [{lo}, {hi}] Hz"));
            }
        }
        if self.min_frequency_gap() <= 0.0 {
            return bad("LED frequencies must be distinct".into());
        }
        if self.markers_per_face != MARKERS_PER_FACE {
            return bad(format!(
                "a 3x3 ChArUco face holds {MARKERS_PER_FACE} markers, got {}",
                self.markers_per_face
            ));
        }
        let dict = Dictionary::by_name(&self.dictionary).ok_or_else(|| {
            TargetError::InvalidSpec(format!("unknown dictionary {}", self.dictionary))
        })?;
        let mut seen = std::collections::BTreeSet::new();
        for (face, ids) in self.marker_ids.iter().enumerate() {
            if ids.len() != self.markers_per_face {
                return bad(format!("face {face} lists {} marker ids", ids.len()));
            }
            for &id in ids {
                if (id as usize) >= dict.len() {
                    return bad(format!("marker id {id} not in {}", self.dictionary));
                }
                if !seen.insert(id) {
                    return bad(format!("marker id {id} used twice"));
                }
            }
        }
        Ok(())
    }

    pub fn min_frequency_gap(&self) -> f64 {
        let mut f = self.led_frequencies_hz;
        f.sort_by(f64::total_cmp);
        f.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Global marker slot (`face * 5 + cell`) for a dictionary ID.
    pub fn marker_slot(&self, id: u16) -> Option<usize> {
        self.marker_ids.iter().enumerate().find_map(|(face, ids)| {
            ids.iter()
                .position(|&i| i == id)
                .map(|m| face * MARKERS_PER_FACE + m)
        })
    }

    pub fn marker_id(&self, slot: usize) -> u16 {
        self.marker_ids[slot / MARKERS_PER_FACE][slot % MARKERS_PER_FACE]
    }

    pub fn dictionary(&self) -> Option<&'static Dictionary> {
        Dictionary::by_name(&self.dictionary)
    }
}

/// Default frequency-matching tolerance: `max(2 Hz, 5 % of nominal)`.
pub fn default_frequency_tolerance(nominal_hz: f64) -> f64 {
    (0.05 * nominal_hz).max(2.0)
}

/// Checks that every LED's tolerance stays below half the smallest gap
/// between configured frequencies, so matches are unique.
pub fn validate_tolerances(spec: &TargetSpec, tol: impl Fn(f64) -> f64) -> Result<(), TargetError> {
    let half_gap = 0.5 * spec.min_frequency_gap();
    for f in spec.led_frequencies_hz {
        if tol(f) >= half_gap {
            return Err(TargetError::InvalidSpec(format!(
                "tolerance {} Hz at {f} Hz is not below half the minimum LED gap ({half_gap} Hz)",
                tol(f)
            )));
        }
    }
    Ok(())
}

pub fn corner_for_frequency(spec: &TargetSpec, freq: f64, tol: f64) -> Result<usize, TargetError> {
    let mut found = None;
    for (i, &f) in spec.led_frequencies_hz.iter().enumerate() {
        if (f - freq).abs() <= tol {
            if let Some(a) = found {
                return Err(TargetError::AmbiguousMatch { freq, a, b: i });
            }
            found = Some(i);
        }
    }
    found.ok_or(TargetError::NoMatch { freq, tol })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame {
    /// In-plane axis along marker rows.
    pub u: Vector3<f64>,
    /// In-plane axis along marker columns (downwards in the marker image).
    pub v: Vector3<f64>,
    /// Inward normal, `u × v`.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGeometry {
    pub edge_length: f64,
    pub corners: [Point3; NUM_LEDS],
    /// `A_{4k+c}` is corner `c` (TL, TR, BR, BL) of marker slot `k`.
    pub aruco_corners: Vec<Point3>,
    pub face_frames: [FaceFrame; NUM_FACES],
}

impl TargetGeometry {
    pub fn face_point(&self, face: usize, u: f64, v: f64) -> Point3 {
        let fr = &self.face_frames[face];
        Point3::from(fr.u * u + fr.v * v)
    }

    /// Face index whose plane contains `p`, within `tol`.
    pub fn face_of(&self, p: &Point3, tol: f64) -> Option<usize> {
        (0..NUM_FACES).find(|&f| self.face_frames[f].normal.dot(&p.coords).abs() <= tol)
    }

    /// The 4 corners of the square face `face`, counter-clockwise in `(u, v)`.
    pub fn face_outline(&self, face: usize) -> [Point3; 4] {
        let l = self.edge_length;
        [
            self.face_point(face, 0.0, 0.0),
            self.face_point(face, l, 0.0),
            self.face_point(face, l, l),
            self.face_point(face, 0.0, l),
        ]
    }
}

pub fn face_frames() -> [FaceFrame; NUM_FACES] {
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    [
        FaceFrame {
            u: x,
            v: y,
            normal: z,
        },
        FaceFrame {
            u: y,
            v: z,
            normal: x,
        },
        FaceFrame {
            u: z,
            v: x,
            normal: y,
        },
    ]
}

/// Position `(u, v)` of a marker's top-left corner on its face.
pub fn marker_origin(spec: &TargetSpec, cell: usize) -> (f64, f64) {
    let pitch = spec.edge_length_m / 3.0;
    let margin = 0.5 * (pitch - spec.marker_side_m);
    let (row, col) = MARKER_CELLS[cell];
    (col as f64 * pitch + margin, row as f64 * pitch + margin)
}

pub fn build_geometry(spec: &TargetSpec) -> Result<TargetGeometry, TargetError> {
    spec.validate()?;
    let l = spec.edge_length_m;
    let pitch = l / 3.0;
    if !(spec.marker_side_m > 0.0 && spec.marker_side_m < pitch) {
        return Err(TargetError::InvalidSpec(format!(
            "marker side {} m does not fit a {pitch:.4} m board cell with positive margins",
            spec.marker_side_m
        )));
    }
    let corners = [
        Point3::origin(),
        Point3::new(l, 0.0, 0.0),
        Point3::new(0.0, l, 0.0),
        Point3::new(0.0, 0.0, l),
        Point3::new(l, l, 0.0),
        Point3::new(0.0, l, l),
        Point3::new(l, 0.0, l),
    ];
    let frames = face_frames();
    let s = spec.marker_side_m;
    let mut aruco = Vec::with_capacity(NUM_ARUCO_CORNERS);
    for frame in &frames {
        for cell in 0..MARKERS_PER_FACE {
            let (u0, v0) = marker_origin(spec, cell);
            for (du, dv) in [(0.0, 0.0), (s, 0.0), (s, s), (0.0, s)] {
                aruco.push(Point3::from(frame.u * (u0 + du) + frame.v * (v0 + dv)));
            }
        }
    }
    Ok(TargetGeometry {
        edge_length: l,
        corners,
        aruco_corners: aruco,
        face_frames: frames,
    })
}
