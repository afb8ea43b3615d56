//! File formats: event streams, point clouds, images, TOML configs and the
//! calibration result JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;
use crate::geometry::{CameraIntrinsics, Point3, Pose};
use crate::lidar::PointCloud;
use crate::pnp::{Calibration, PointResidual};
use crate::rgb::GrayImage;
use crate::target::TargetSpec;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{}: unsupported file type", path.display())]
    Unsupported { path: PathBuf },
}

impl IoError {
    fn parse(path: &Path, msg: impl ToString) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    /// True for failures reading or writing the file system, as opposed to
    /// malformed content.
    pub fn is_io(&self) -> bool {
        matches!(self, IoError::Io { .. })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

// ---- events ----

pub const EVB_RECORD_BYTES: usize = 13;

/// Reads `.csv` (`x,y,t_us,polarity` with header) or `.evb` (packed
/// little-endian `u16 x, u16 y, u64 t_us, i8 polarity`).
pub fn read_events(path: &Path) -> Result<Vec<Event>, IoError> {
    match extension(path).as_str() {
        "csv" => {
            let bytes = read(path)?;
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(bytes.as_slice());
            rdr.deserialize()
                .collect::<Result<Vec<Event>, _>>()
                .map_err(|e| IoError::parse(path, e))
        }
        "evb" => decode_evb(&read(path)?).map_err(|m| IoError::parse(path, m)),
        _ => Err(IoError::Unsupported {
            path: path.to_path_buf(),
        }),
    }
}

pub fn decode_evb(bytes: &[u8]) -> Result<Vec<Event>, String> {
    if bytes.len() % EVB_RECORD_BYTES != 0 {
        return Err(format!(
            "length {} is not a multiple of {EVB_RECORD_BYTES}",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(EVB_RECORD_BYTES)
        .map(|r| Event {
            x: u16::from_le_bytes([r[0], r[1]]),
            y: u16::from_le_bytes([r[2], r[3]]),
            t: u64::from_le_bytes(r[4..12].try_into().expect("8 bytes")),
            polarity: r[12] as i8,
        })
        .collect())
}

pub fn encode_evb(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * EVB_RECORD_BYTES);
    for e in events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.polarity as u8);
    }
    out
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), IoError> {
    match extension(path).as_str() {
        "evb" => write_bytes(path, &encode_evb(events)),
        "csv" => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for e in events {
                w.serialize(e).map_err(|e| IoError::parse(path, e))?;
            }
            let bytes = w.into_inner().map_err(|e| IoError::parse(path, e))?;
            write_bytes(path, &bytes)
        }
        _ => Err(IoError::Unsupported {
            path: path.to_path_buf(),
        }),
    }
}

// ---- point clouds ----

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Parses ASCII or binary little-endian PLY with a `vertex` element holding
/// `x, y, z` and optionally `intensity`.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, String> {
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or("missing end_header")?;
    let body_start = bytes[header_end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| header_end + p + 1)
        .ok_or("truncated header")?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut binary = None;
    let mut count = None;
    let mut props: Vec<(PlyType, String)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(format!("unsupported PLY format {other}")),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err("duplicate vertex element".into());
                }
                count = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if count.is_none() && *n != "0" {
                    return Err("elements before vertex are not supported".into());
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err("list properties in vertex".into()),
            ["property", ty, name] if in_vertex => {
                let t = PlyType::parse(ty).ok_or_else(|| format!("unknown property type {ty}"))?;
                props.push((t, name.to_string()));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or("missing format line")?;
    let count = count.ok_or("missing vertex element")?;
    let index = |n: &str| props.iter().position(|(_, p)| p == n);
    let (ix, iy, iz) = match (index("x"), index("y"), index("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("vertex needs x, y, z".into()),
    };
    let ii = index("intensity");
    let mut points = Vec::with_capacity(count);
    let mut intensity = ii.map(|_| Vec::with_capacity(count));
    let body = &bytes[body_start..];
    if binary {
        let stride: usize = props.iter().map(|(t, _)| t.size()).sum();
        let offsets: Vec<usize> = props
            .iter()
            .scan(0, |acc, (t, _)| {
                let o = *acc;
                *acc += t.size();
                Some(o)
            })
            .collect();
        if body.len() < stride * count {
            return Err(format!(
                "expected {} body bytes, found {}",
                stride * count,
                body.len()
            ));
        }
        for rec in body.chunks_exact(stride).take(count) {
            let val = |i: usize| props[i].0.read_le(&rec[offsets[i]..]);
            points.push(Point3::new(val(ix), val(iy), val(iz)));
            if let (Some(v), Some(i)) = (intensity.as_mut(), ii) {
                v.push(val(i) as f32);
            }
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| "body is not UTF-8")?;
        let mut rows = text.lines().filter(|l| !l.trim().is_empty());
        for _ in 0..count {
            let row = rows.next().ok_or("too few vertex rows")?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| format!("{t}: {e}")))
                .collect::<Result<_, _>>()?;
            if vals.len() < props.len() {
                return Err(format!(
                    "row has {} values, expected {}",
                    vals.len(),
                    props.len()
                ));
            }
            points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
            if let (Some(v), Some(i)) = (intensity.as_mut(), ii) {
                v.push(vals[i] as f32);
            }
        }
    }
    Ok(PointCloud { points, intensity })
}

fn ply_header(cloud: &PointCloud, format: &str) -> String {
    let mut h = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.intensity.is_some() {
        h.push_str("property float intensity\n");
    }
    h.push_str("end_header\n");
    h
}

/// Binary little-endian PLY with `float` coordinates.
pub fn encode_ply_binary(cloud: &PointCloud) -> Vec<u8> {
    let mut out = ply_header(cloud, "binary_little_endian").into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(int) = &cloud.intensity {
            out.extend_from_slice(&int[i].to_le_bytes());
        }
    }
    out
}

pub fn encode_ply_ascii(cloud: &PointCloud) -> Vec<u8> {
    let mut out = ply_header(cloud, "ascii").into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).unwrap();
        if let Some(int) = &cloud.intensity {
            write!(out, " {}", int[i]).unwrap();
        }
        out.push(b'\n');
    }
    out
}

/// CSV `x,y,z[,intensity]`; a non-numeric first row is taken as a header.
pub fn parse_cloud_csv(text: &str) -> Result<PointCloud, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut intensity: Option<Vec<f32>> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(|v| v.parse::<f64>()).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(format!("row {}: {e}", row + 1)),
        };
        if vals.len() < 3 {
            return Err(format!("row {} has {} columns", row + 1, vals.len()));
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if vals.len() > 3 {
            intensity.get_or_insert_with(Vec::new).push(vals[3] as f32);
        }
    }
    if intensity.as_ref().is_some_and(|i| i.len() != points.len()) {
        return Err("intensity column present on some rows only".into());
    }
    Ok(PointCloud { points, intensity })
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, IoError> {
    match extension(path).as_str() {
        "ply" => parse_ply(&read(path)?).map_err(|m| IoError::parse(path, m)),
        "csv" => {
            let bytes = read(path)?;
            let text = String::from_utf8(bytes).map_err(|e| IoError::parse(path, e))?;
            parse_cloud_csv(&text).map_err(|m| IoError::parse(path, m))
        }
        _ => Err(IoError::Unsupported {
            path: path.to_path_buf(),
        }),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_bytes(path, &encode_ply_binary(cloud))
}

// ---- images ----

/// Binary (P5) 8-bit PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| "bad header")?
                .to_string(),
        );
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic {}", fields[0]));
    }
    let num = |s: &str| s.parse::<u32>().map_err(|e| format!("{s}: {e}"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported (maxval {maxval})"));
    }
    pos += 1; // single whitespace after maxval
    let n = w as usize * h as usize;
    if bytes.len() < pos + n {
        return Err("truncated PGM data".into());
    }
    GrayImage::from_raw(w, h, bytes[pos..pos + n].to_vec()).map_err(|e| e.to_string())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// PGM (P5) or PNG; color PNGs are converted by luma.
pub fn read_image(path: &Path) -> Result<GrayImage, IoError> {
    match extension(path).as_str() {
        "pgm" => parse_pgm(&read(path)?).map_err(|m| IoError::parse(path, m)),
        "png" => {
            let bytes = read(path)?;
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| IoError::parse(path, e))?
                .to_luma8();
            let (w, h) = img.dimensions();
            GrayImage::from_raw(w, h, img.into_raw()).map_err(|e| IoError::parse(path, e))
        }
        _ => Err(IoError::Unsupported {
            path: path.to_path_buf(),
        }),
    }
}

/// 8-bit grayscale PNG.
pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            &img.data,
            img.width,
            img.height,
            image::ExtendedColorType::L8,
        )
        .expect("in-memory PNG encoding");
    out
}

// ---- TOML / JSON ----

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| IoError::parse(path, e))?;
    toml::from_str(&text).map_err(|e| IoError::parse(path, e.message()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config types serialize to TOML")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::parse(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let k: CameraIntrinsics = read_toml(path)?;
    k.validate().map_err(|e| IoError::parse(path, e))?;
    Ok(k)
}

pub fn read_target(path: &Path) -> Result<TargetSpec, IoError> {
    let t: TargetSpec = read_toml(path)?;
    t.validate().map_err(|e| IoError::parse(path, e))?;
    Ok(t)
}

/// SHA-256 of the canonical JSON form of a config, hex encoded.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(config).expect("serializable config");
    hex::encode(Sha256::digest(&json))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReprojectionRecord {
    pub mean_px: f64,
    pub max_px: f64,
    pub per_point: Vec<PointResidual>,
}

/// On-disk calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub source: String,
    pub target: String,
    pub rotation_quaternion_wxyz: [f64; 4],
    pub rotation_matrix_row_major: [f64; 9],
    pub translation_m: [f64; 3],
    pub reprojection: ReprojectionRecord,
    pub config_digest: String,
    pub seed: u64,
}

impl CalibrationRecord {
    pub fn new(cal: &Calibration, config_digest: &str, seed: u64) -> Self {
        let pose = cal.extrinsics.pose;
        let r = pose.rotation_matrix();
        let mut rm = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rm[3 * i + j] = r[(i, j)];
            }
        }
        Self {
            source: cal.extrinsics.source.clone(),
            target: cal.extrinsics.target.clone(),
            rotation_quaternion_wxyz: pose.quaternion_wxyz(),
            rotation_matrix_row_major: rm,
            translation_m: pose.translation.into(),
            reprojection: ReprojectionRecord {
                mean_px: cal.stats.mean_px,
                max_px: cal.stats.max_px,
                per_point: cal.stats.per_point.clone(),
            },
            config_digest: config_digest.to_string(),
            seed,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::from_quaternion_wxyz(self.rotation_quaternion_wxyz, self.translation_m.into())
    }
}
