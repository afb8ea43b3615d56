//! SVG overlays of a projected point cloud on a camera raster.

use std::fmt::Write;

use base64::Engine;
use calibcube_core::events::Event;
use calibcube_core::geometry::{project_camera_frame, MIN_DEPTH};
use calibcube_core::io::encode_png;
use calibcube_core::lidar::PointCloud;
use calibcube_core::rgb::GrayImage;
use calibcube_core::{CameraIntrinsics, Point2, Pose};

/// Accumulation window of the event frame, in microseconds.
pub const EVENT_FRAME_US: u64 = 33_333;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayPoint {
    pub pixel: Point2,
    /// Depth along the camera's optical axis, meters.
    pub depth: f64,
}

/// Projects the cloud (LiDAR frame) through `lidar_to_camera`, keeping
/// points in front of the camera that land inside the image.
pub fn project_cloud(
    cloud: &PointCloud,
    lidar_to_camera: &Pose,
    k: &CameraIntrinsics,
) -> Vec<OverlayPoint> {
    cloud
        .points
        .iter()
        .filter_map(|p| {
            let pc = lidar_to_camera.transform_point(p);
            if pc.z <= MIN_DEPTH {
                return None;
            }
            let pixel = project_camera_frame(&pc, k).ok()?;
            k.contains(&pixel)
                .then_some(OverlayPoint { pixel, depth: pc.z })
        })
        .collect()
}

/// Cumulative event frame over `[t0_us, t0_us + EVENT_FRAME_US)`: black
/// background, brighter with more events per pixel.
pub fn event_frame(events: &[Event], width: u32, height: u32, t0_us: u64) -> GrayImage {
    let mut counts = vec![0u32; width as usize * height as usize];
    let t1 = t0_us.saturating_add(EVENT_FRAME_US);
    for e in events.iter().filter(|e| e.t >= t0_us && e.t < t1) {
        if (e.x as u32) < width && (e.y as u32) < height {
            counts[e.y as usize * width as usize + e.x as usize] += 1;
        }
    }
    let data = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0
            } else {
                (95 + 40 * c).min(255) as u8
            }
        })
        .collect();
    GrayImage {
        width,
        height,
        data,
    }
}

/// Near points red, far points blue.
fn depth_color(t: f64) -> (u8, u8, u8) {
    let h = 4.0 * t.clamp(0.0, 1.0);
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        _ => (0.0, x, 1.0),
    };
    let c = |v: f64| (v * 255.0).round() as u8;
    (c(r), c(g), c(b))
}

/// One raster layer (`<g id="raster">` with a PNG `<image>`) and, unless
/// `points` is empty, one point layer (`<g id="points">`).
pub fn render_svg(
    raster: &GrayImage,
    points: &[OverlayPoint],
    title: &str,
    config_digest: &str,
    seed: u64,
) -> String {
    let (w, h) = (raster.width, raster.height);
    let png = base64::engine::general_purpose::STANDARD.encode(encode_png(raster));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r#"<metadata>{{"config_digest":"{config_digest}","seed":{seed}}}</metadata>"#
    );
    let _ = writeln!(
        s,
        r#"<g id="raster"><image x="0" y="0" width="{w}" height="{h}" href="data:image/png;base64,{png}"/></g>"#
    );
    if !points.is_empty() {
        let (lo, hi) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
            (lo.min(p.depth), hi.max(p.depth))
        });
        let span = (hi - lo).max(1e-9);
        let _ = writeln!(s, r#"<g id="points" stroke="none">"#);
        for p in points {
            let (r, g, b) = depth_color((p.depth - lo) / span);
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
                p.pixel.x, p.pixel.y
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
