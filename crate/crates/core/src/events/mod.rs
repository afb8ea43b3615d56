//! LED keypoints from an event stream: per-pixel blink frequency maps over
//! stream segments, consensus selection of the cleanest map, and ellipse
//! fits on the per-LED frequency masks.

mod ellipse;
mod keypoints;
mod spectrum;

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ellipse::{fit_ellipse, Ellipse};
pub use keypoints::{extract_led_keypoints, FrequencyTolerance, LedKeypoint};
pub use spectrum::dominant_frequency;

use crate::target::TargetSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("invalid frequency config: {0}")]
    InvalidConfig(String),
    #[error("segment of {duration_us} us is shorter than the required {required_us} us")]
    SegmentTooShort { duration_us: u64, required_us: u64 },
    #[error("no frequency map has a non-empty active region")]
    NoValidMap,
    #[error("ellipse fit needs at least 6 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate point configuration for ellipse fit")]
    DegenerateConfiguration,
    #[error("only {found} LEDs detected, missing corners {missing:?}")]
    MissingLeds { found: usize, missing: Vec<usize> },
    #[error("event stream is empty")]
    EmptyStream,
}

/// One brightness change: pixel, timestamp in microseconds, polarity ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    #[serde(rename = "t_us")]
    pub t: u64,
    pub polarity: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, polarity: i8) -> Self {
        Self { x, y, t, polarity }
    }
}

/// Sorts events by timestamp, keeping arrival order for equal stamps.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by_key(|e| e.t);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    /// Temporal bin length in microseconds.
    pub bin_dt_us: u64,
    /// Number of equal-duration segments (one frequency map each).
    pub n_segments: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Pixels with fewer non-empty bins in a segment are left at 0.
    pub min_active_bins: usize,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        Self {
            bin_dt_us: 1000,
            n_segments: 10,
            f_min_hz: 10.0,
            f_max_hz: 200.0,
            min_active_bins: 4,
        }
    }
}

impl FrequencyConfig {
    pub fn sample_rate_hz(&self) -> f64 {
        1e6 / self.bin_dt_us as f64
    }

    pub fn validate(&self) -> Result<(), EventError> {
        let bad = |m: String| Err(EventError::InvalidConfig(m));
        if self.bin_dt_us == 0 {
            return bad("bin_dt_us must be positive".into());
        }
        if self.n_segments == 0 {
            return bad("n_segments must be at least 1".into());
        }
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz) {
            return bad(format!(
                "bad band [{}, {}] Hz",
                self.f_min_hz, self.f_max_hz
            ));
        }
        let nyquist = 0.5 * self.sample_rate_hz();
        if self.f_max_hz >= nyquist {
            return bad(format!(
                "f_max {} Hz is not below the Nyquist frequency {nyquist} Hz",
                self.f_max_hz
            ));
        }
        if self.min_active_bins == 0 {
            return bad("min_active_bins must be at least 1".into());
        }
        Ok(())
    }

    pub fn min_segment_us(&self) -> u64 {
        2 * self.min_active_bins as u64 * self.bin_dt_us
    }
}

/// Per-pixel dominant blink frequency in Hz, `0` where none was detected.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    /// `[start, end)` in microseconds.
    pub segment: (u64, u64),
}

impl FrequencyMap {
    pub fn zeros(width: u32, height: u32, segment: (u64, u64)) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
            segment,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        let w = self.width as usize;
        self.values[y as usize * w + x as usize] = v;
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Inclusive axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BoundingBox {
    pub fn new(min_x: u32, min_y: u32, max_x: u32, max_y: u32) -> Self {
        debug_assert!(min_x <= max_x && min_y <= max_y);
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn coords(&self) -> [u32; 4] {
        [self.min_x, self.min_y, self.max_x, self.max_y]
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> u32 {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> u32 {
        self.max_y - self.min_y + 1
    }
}

/// Square-wave reconstruction of one pixel: bin value `+1` when positive
/// events outnumber negative ones, `-1` when outnumbered, otherwise the
/// previous bin's value (starting from `-1`, LED off).
///
/// `events` must belong to a single pixel and be sorted by time; events
/// outside `[t_start, t_start + n_bins * bin_dt_us)` are ignored. Also
/// returns the number of non-empty bins.
pub fn build_pixel_signal(
    events: &[Event],
    t_start: u64,
    n_bins: usize,
    bin_dt_us: u64,
) -> (Vec<i8>, usize) {
    let mut net = vec![0i32; n_bins];
    let mut hits = vec![false; n_bins];
    for e in events {
        if e.t < t_start {
            continue;
        }
        let bin = ((e.t - t_start) / bin_dt_us) as usize;
        if bin >= n_bins {
            continue;
        }
        net[bin] += e.polarity.signum() as i32;
        hits[bin] = true;
    }
    let (signal, active) = signal_from_bins(&net, &hits);
    (signal, active)
}

fn signal_from_bins(net: &[i32], hits: &[bool]) -> (Vec<i8>, usize) {
    let mut level = -1i8;
    let signal = net
        .iter()
        .map(|&n| {
            if n > 0 {
                level = 1;
            } else if n < 0 {
                level = -1;
            }
            level
        })
        .collect();
    (signal, hits.iter().filter(|h| **h).count())
}

/// Frequency map of the events falling in `segment = [start, end)`.
pub fn estimate_frequency_map(
    events: &[Event],
    width: u32,
    height: u32,
    segment: (u64, u64),
    config: &FrequencyConfig,
) -> Result<FrequencyMap, EventError> {
    config.validate()?;
    let (t0, t1) = segment;
    let duration = t1.saturating_sub(t0);
    if duration < config.min_segment_us() {
        return Err(EventError::SegmentTooShort {
            duration_us: duration,
            required_us: config.min_segment_us(),
        });
    }
    let n_bins = (duration / config.bin_dt_us) as usize;
    let fft_len = (4 * n_bins).next_power_of_two();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(fft_len);

    // (pixel, bin, polarity) for in-segment, in-frame events; the stable sort
    // keeps each pixel's events in time order.
    let mut samples: Vec<(u32, u32, i8)> = events
        .iter()
        .filter(|e| e.t >= t0 && e.t < t1 && (e.x as u32) < width && (e.y as u32) < height)
        .filter_map(|e| {
            let bin = ((e.t - t0) / config.bin_dt_us) as usize;
            (bin < n_bins).then(|| (e.y as u32 * width + e.x as u32, bin as u32, e.polarity))
        })
        .collect();
    samples.sort_by_key(|s| s.0);

    let mut groups: Vec<&[(u32, u32, i8)]> = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].0 != samples[start].0 {
            groups.push(&samples[start..i]);
            start = i;
        }
    }

    let results: Vec<(u32, f32)> = groups
        .par_iter()
        .map_init(
            || (vec![0i32; n_bins], vec![false; n_bins]),
            |(net, hits), group| {
                net.iter_mut().for_each(|v| *v = 0);
                hits.iter_mut().for_each(|v| *v = false);
                for &(_, bin, pol) in group.iter() {
                    net[bin as usize] += pol.signum() as i32;
                    hits[bin as usize] = true;
                }
                let (signal, active) = signal_from_bins(net, hits);
                let f = if active < config.min_active_bins {
                    0.0
                } else {
                    spectrum::dominant_frequency_with(
                        &signal,
                        config.sample_rate_hz(),
                        fft.as_ref(),
                    )
                    .filter(|f| *f >= config.f_min_hz && *f <= config.f_max_hz)
                    .unwrap_or(0.0)
                };
                (group[0].0, f as f32)
            },
        )
        .collect();

    let mut map = FrequencyMap::zeros(width, height, segment);
    for (idx, f) in results {
        map.values[idx as usize] = f;
    }
    Ok(map)
}

/// `n` equal segments covering `[first_event, last_event]`.
pub fn split_segments(events: &[Event], n: usize) -> Option<Vec<(u64, u64)>> {
    let t0 = events.iter().map(|e| e.t).min()?;
    let t1 = events.iter().map(|e| e.t).max()? + 1;
    let span = t1 - t0;
    Some(
        (0..n as u64)
            .map(|i| (t0 + span * i / n as u64, t0 + span * (i + 1) / n as u64))
            .collect(),
    )
}

/// Frequency maps for all configured segments of the stream; computed in
/// parallel, identical to the sequential result.
pub fn segment_frequency_maps(
    events: &[Event],
    width: u32,
    height: u32,
    config: &FrequencyConfig,
) -> Result<Vec<FrequencyMap>, EventError> {
    config.validate()?;
    let segments = split_segments(events, config.n_segments).ok_or(EventError::EmptyStream)?;
    segments
        .par_iter()
        .map(|&seg| estimate_frequency_map(events, width, height, seg, config))
        .collect()
}

/// Tight box around the non-zero pixels, `None` for an all-zero map.
pub fn active_bbox(map: &FrequencyMap) -> Option<BoundingBox> {
    let w = map.width as usize;
    let mut bbox: Option<BoundingBox> = None;
    for (i, v) in map.values.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        bbox = Some(match bbox {
            None => BoundingBox::new(x, y, x, y),
            Some(b) => BoundingBox::new(
                b.min_x.min(x),
                b.min_y.min(y),
                b.max_x.max(x),
                b.max_y.max(y),
            ),
        });
    }
    bbox
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSelection {
    pub index: usize,
    pub bbox: BoundingBox,
    /// Indices that survived the empty-box and 3-σ filters.
    pub survivors: Vec<usize>,
    /// Mean box of the survivors, `[min_x, min_y, max_x, max_y]`.
    pub reference: [f64; 4],
}

/// Picks the map whose active box is closest (L1) to the mean box of the
/// non-outlier maps. Boxes with any coordinate beyond 3 standard deviations
/// of that coordinate's mean are outliers; ties go to the lowest index.
pub fn select_best_bbox(bboxes: &[Option<BoundingBox>]) -> Result<MapSelection, EventError> {
    let valid: Vec<(usize, [u32; 4])> = bboxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b.coords())))
        .collect();
    if valid.is_empty() {
        return Err(EventError::NoValidMap);
    }

    // Integer sums keep the statistics independent of input order.
    let n = valid.len() as f64;
    let mut keep = vec![true; valid.len()];
    for c in 0..4 {
        let sum: u64 = valid.iter().map(|(_, b)| b[c] as u64).sum();
        let sum_sq: u128 = valid.iter().map(|(_, b)| (b[c] as u128).pow(2)).sum();
        let mean = sum as f64 / n;
        let var_num = (valid.len() as u128 * sum_sq).saturating_sub((sum as u128).pow(2));
        let sigma = (var_num as f64).sqrt() / n;
        for (k, (_, b)) in valid.iter().enumerate() {
            let dev = (b[c] as f64 - mean).abs();
            if dev > 3.0 * sigma && dev > 1e-9 {
                keep[k] = false;
            }
        }
    }
    let survivors: Vec<(usize, [u32; 4])> = valid
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(v, _)| *v)
        .collect();
    // at least one box always lies within 3σ of the mean
    debug_assert!(!survivors.is_empty());

    let m = survivors.len() as f64;
    let mut reference = [0.0; 4];
    for (c, r) in reference.iter_mut().enumerate() {
        let sum: u64 = survivors.iter().map(|(_, b)| b[c] as u64).sum();
        *r = sum as f64 / m;
    }
    let l1 = |b: &[u32; 4]| -> f64 { (0..4).map(|c| (b[c] as f64 - reference[c]).abs()).sum() };
    let mut best = survivors[0];
    let mut best_d = l1(&best.1);
    for s in &survivors[1..] {
        let d = l1(&s.1);
        if d < best_d {
            best = *s;
            best_d = d;
        }
    }
    Ok(MapSelection {
        index: best.0,
        bbox: bboxes[best.0].expect("selected a valid box"),
        survivors: survivors.iter().map(|s| s.0).collect(),
        reference,
    })
}

pub fn select_best_map(maps: &[FrequencyMap]) -> Result<MapSelection, EventError> {
    let boxes: Vec<Option<BoundingBox>> = maps.iter().map(active_bbox).collect();
    select_best_bbox(&boxes)
}

/// Everything the event branch produces.
#[derive(Debug, Clone)]
pub struct EventDetection {
    pub segments: Vec<(u64, u64)>,
    pub bboxes: Vec<Option<BoundingBox>>,
    pub selection: MapSelection,
    pub keypoints: Vec<LedKeypoint>,
}

/// Runs the full event branch: segment maps, best-map selection, keypoints.
pub fn detect_led_keypoints(
    events: &[Event],
    width: u32,
    height: u32,
    config: &FrequencyConfig,
    spec: &TargetSpec,
    tolerance: &FrequencyTolerance,
) -> Result<EventDetection, EventError> {
    let maps = segment_frequency_maps(events, width, height, config)?;
    let bboxes: Vec<Option<BoundingBox>> = maps.iter().map(active_bbox).collect();
    let selection = select_best_bbox(&bboxes)?;
    let keypoints =
        extract_led_keypoints(&maps[selection.index], &selection.bbox, spec, tolerance)?;
    Ok(EventDetection {
        segments: maps.iter().map(|m| m.segment).collect(),
        bboxes,
        selection,
        keypoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_wave_events(freq: f64, duration_s: f64, x: u16, y: u16) -> Vec<Event> {
        let half = 0.5 / freq;
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = 0.37 * half + k as f64 * half;
            if t >= duration_s {
                break;
            }
            let pol = if k % 2 == 0 { 1 } else { -1 };
            out.push(Event::new(x, y, (t * 1e6).round() as u64, pol));
            k += 1;
        }
        out
    }

    #[test]
    fn alternating_bins_give_square_wave() {
        let ev: Vec<Event> = (0..6)
            .map(|i| Event::new(0, 0, i * 1000 + 10, if i % 2 == 0 { 1 } else { -1 }))
            .collect();
        let (s, active) = build_pixel_signal(&ev, 0, 6, 1000);
        assert_eq!(s, vec![1, -1, 1, -1, 1, -1]);
        assert_eq!(active, 6);
    }

    #[test]
    fn empty_bin_holds_previous_value() {
        let ev = [Event::new(0, 0, 100, 1), Event::new(0, 0, 2100, -1)];
        let (s, active) = build_pixel_signal(&ev, 0, 4, 1000);
        // hold rule, simulated by hand: +1, (empty -> +1), -1, (empty -> -1)
        assert_eq!(s, vec![1, 1, -1, -1]);
        assert_eq!(active, 2);
    }

    #[test]
    fn tie_holds_and_initial_level_is_off() {
        let ev = [
            Event::new(0, 0, 1100, 1),
            Event::new(0, 0, 1200, -1),
            Event::new(0, 0, 2100, 1),
        ];
        let (s, _) = build_pixel_signal(&ev, 0, 4, 1000);
        assert_eq!(s, vec![-1, -1, 1, 1]);
        let (s, active) = build_pixel_signal(&[], 0, 3, 1000);
        assert_eq!((s, active), (vec![-1, -1, -1], 0));
    }

    #[test]
    fn all_positive_is_constant_high() {
        let ev: Vec<Event> = (0..5).map(|i| Event::new(0, 0, i * 1000, 1)).collect();
        let (s, _) = build_pixel_signal(&ev, 0, 5, 1000);
        assert!(s.iter().all(|v| *v == 1));
    }

    /// Independent oracle: half the number of sign changes per second.
    fn zero_crossing_frequency(signal: &[i8], bin_dt_s: f64) -> f64 {
        let changes = signal.windows(2).filter(|w| w[0] != w[1]).count();
        changes as f64 / 2.0 / (signal.len() as f64 * bin_dt_s)
    }

    #[test]
    fn fifty_hz_pixel() {
        let ev = square_wave_events(50.0, 1.0, 3, 4);
        let cfg = FrequencyConfig::default();
        let (signal, _) = build_pixel_signal(&ev, 0, 1000, 1000);
        let oracle = zero_crossing_frequency(&signal, 1e-3);
        assert!((oracle - 50.0).abs() <= 0.5, "oracle {oracle}");
        let map = estimate_frequency_map(&ev, 8, 8, (0, 1_000_000), &cfg).unwrap();
        let f = map.get(3, 4) as f64;
        assert!((f - oracle).abs() <= 0.5, "estimate {f} vs oracle {oracle}");
        assert_eq!(map.nonzero_count(), 1);
    }

    #[test]
    fn out_of_band_pixels_are_zero() {
        let cfg = FrequencyConfig::default();
        let mut ev = square_wave_events(5.0, 1.0, 1, 1);
        ev.extend(square_wave_events(250.0, 1.0, 2, 2));
        sort_events(&mut ev);
        let map = estimate_frequency_map(&ev, 4, 4, (0, 1_000_000), &cfg).unwrap();
        assert_eq!(map.get(1, 1), 0.0);
        assert_eq!(map.get(2, 2), 0.0);
    }

    #[test]
    fn empty_stream_gives_zero_map() {
        let cfg = FrequencyConfig::default();
        let map = estimate_frequency_map(&[], 5, 5, (0, 100_000), &cfg).unwrap();
        assert_eq!(map.nonzero_count(), 0);
        assert_eq!(active_bbox(&map), None);
    }

    #[test]
    fn short_segment_is_rejected() {
        let cfg = FrequencyConfig::default();
        let err = estimate_frequency_map(&[], 5, 5, (0, 7_000), &cfg).unwrap_err();
        assert!(matches!(err, EventError::SegmentTooShort { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(FrequencyConfig::default().validate().is_ok());
        let nyq = FrequencyConfig {
            bin_dt_us: 3000,
            ..FrequencyConfig::default()
        };
        assert!(nyq.validate().is_err());
        let zero = FrequencyConfig {
            bin_dt_us: 0,
            ..FrequencyConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn bbox_examples() {
        let mut map = FrequencyMap::zeros(30, 30, (0, 1));
        map.set(10, 20, 50.0);
        assert_eq!(active_bbox(&map), Some(BoundingBox::new(10, 20, 10, 20)));
        let mut map = FrequencyMap::zeros(30, 30, (0, 1));
        map.set(1, 1, 50.0);
        map.set(5, 9, 75.0);
        assert_eq!(active_bbox(&map), Some(BoundingBox::new(1, 1, 5, 9)));
    }

    #[test]
    fn identical_boxes_pick_first() {
        let b = Some(BoundingBox::new(3, 4, 10, 12));
        let sel = select_best_bbox(&[b, b, b]).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.survivors, vec![0, 1, 2]);
        assert_eq!(select_best_bbox(&[b]).unwrap().index, 0);
        assert_eq!(select_best_bbox(&[None, b]).unwrap().index, 1);
        assert_eq!(select_best_bbox(&[None, None]), Err(EventError::NoValidMap));
    }

    #[test]
    fn corrupted_box_is_not_selected() {
        let mut boxes = vec![Some(BoundingBox::new(10, 10, 20, 20)); 9];
        boxes[4] = Some(BoundingBox::new(11, 10, 20, 21));
        boxes.push(Some(BoundingBox::new(100, 100, 200, 200)));
        let sel = select_best_bbox(&boxes).unwrap();

        // oracle: direct mean / population σ / L1 computation
        let coords: Vec<[f64; 4]> = boxes
            .iter()
            .map(|b| b.unwrap().coords().map(|c| c as f64))
            .collect();
        let n = coords.len() as f64;
        let mut keep = vec![true; coords.len()];
        for c in 0..4 {
            let mean = coords.iter().map(|b| b[c]).sum::<f64>() / n;
            let sd = (coords.iter().map(|b| (b[c] - mean).powi(2)).sum::<f64>() / n).sqrt();
            for (k, b) in coords.iter().enumerate() {
                if (b[c] - mean).abs() > 3.0 * sd {
                    keep[k] = false;
                }
            }
        }
        let kept: Vec<usize> = (0..coords.len()).filter(|k| keep[*k]).collect();
        assert_eq!(sel.survivors, kept);
        let m = kept.len() as f64;
        let r: Vec<f64> = (0..4)
            .map(|c| kept.iter().map(|k| coords[*k][c]).sum::<f64>() / m)
            .collect();
        let d = |k: usize| (0..4).map(|c| (coords[k][c] - r[c]).abs()).sum::<f64>();
        let oracle = kept
            .iter()
            .copied()
            .fold(kept[0], |best, k| if d(k) < d(best) { k } else { best });
        assert_eq!(sel.index, oracle);
        assert!(sel.index < 9);
    }

    #[test]
    fn split_covers_span() {
        let ev = [Event::new(0, 0, 100, 1), Event::new(0, 0, 1099, 1)];
        let segs = split_segments(&ev, 4).unwrap();
        assert_eq!(segs.first().unwrap().0, 100);
        assert_eq!(segs.last().unwrap().1, 1100);
        for w in segs.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..50, 0u32..50, 0u32..30, 0u32..30)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn selection_is_permutation_invariant(
            boxes in prop::collection::vec(arb_box(), 1..12),
            seed in any::<u64>(),
        ) {
            let opt: Vec<Option<BoundingBox>> = boxes.iter().copied().map(Some).collect();
            let a = select_best_bbox(&opt).unwrap();
            let mut perm: Vec<usize> = (0..opt.len()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled: Vec<Option<BoundingBox>> = perm.iter().map(|&i| opt[i]).collect();
            let b = select_best_bbox(&shuffled).unwrap();
            prop_assert_eq!(a.reference, b.reference);
            let d = |bb: &BoundingBox| -> f64 {
                bb.coords().iter().zip(a.reference).map(|(c, r)| (*c as f64 - r).abs()).sum()
            };
            prop_assert_eq!(d(&a.bbox), d(&b.bbox));
            let unique = a.survivors.iter().filter(|&&k| d(&boxes[k]) == d(&a.bbox) && boxes[k] != a.bbox).count() == 0;
            if unique {
                prop_assert_eq!(a.bbox, b.bbox);
            }
        }

        #[test]
        fn in_band_square_waves_are_recovered(freq in 10.0f64..200.0) {
            let ev = square_wave_events(freq, 1.0, 0, 0);
            let cfg = FrequencyConfig::default();
            let map = estimate_frequency_map(&ev, 1, 1, (0, 1_000_000), &cfg).unwrap();
            let f = map.get(0, 0) as f64;
            let fft_bin = cfg.sample_rate_hz() / (4000f64).log2().ceil().exp2();
            prop_assert!((f - freq).abs() <= fft_bin.max(0.5), "{} vs {}", f, freq);
        }
    }
}
