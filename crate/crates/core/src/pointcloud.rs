//! Point-cloud ingestion, ground removal and window cropping.
//!
//! Clouds live in the sensor frame with `z` pointing up. Every operation here
//! returns a subset of its input; nothing is interpolated or synthesized.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returns below this height are discarded as spurious before any processing.
pub const Z_MIN: f64 = -3.0;
/// Returns above this height are discarded as spurious before any processing.
pub const Z_MAX: f64 = 30.0;

const KITTI_RECORD: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: Option<f32>,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: None,
        }
    }

    pub fn with_intensity(x: f64, y: f64, z: f64, intensity: f32) -> Self {
        Self {
            x,
            y,
            z,
            intensity: Some(intensity),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: 0,
        }
    }

    pub fn with_frame_id(mut self, frame_id: u64) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn filtered(&self, keep: impl Fn(&Point3) -> bool) -> PointCloud {
        PointCloud {
            points: self.points.iter().copied().filter(|p| keep(p)).collect(),
            frame_id: self.frame_id,
        }
    }
}

/// A decoded cloud together with the number of non-finite records dropped.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub cloud: PointCloud,
    pub dropped: usize,
}

/// Decodes a KITTI velodyne scan: little-endian `f32` quadruples
/// `(x, y, z, intensity)`.
pub fn parse_kitti_bin(bytes: &[u8]) -> Result<Loaded> {
    let tail = bytes.len() % KITTI_RECORD;
    if tail != 0 {
        return Err(Error::Format {
            offset: (bytes.len() - tail) as u64,
            msg: format!("truncated record: {tail} trailing bytes, records are {KITTI_RECORD} bytes"),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_RECORD);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(KITTI_RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        let p = Point3::with_intensity(f(0) as f64, f(1) as f64, f(2) as f64, f(3));
        if p.is_finite() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(Loaded {
        cloud: PointCloud::new(points),
        dropped,
    })
}

pub fn load_kitti_bin(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_bin(&bytes)
}

/// Encodes a cloud in the KITTI layout. Missing intensities are written as 0.
pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity.unwrap_or(0.0)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses whitespace-separated `x y z [intensity]` lines. `#` starts a comment.
pub fn parse_ascii(text: &str, path: &Path) -> Result<Loaded> {
    let mut points = Vec::new();
    let mut dropped = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let p = match fields.as_slice() {
            [x, y, z] => Point3::new(*x, *y, *z),
            [x, y, z, i] => Point3::with_intensity(*x, *y, *z, *i as f32),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected 3 or 4 fields, found {}", fields.len()),
                })
            }
        };
        if p.is_finite() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(Loaded {
        cloud: PointCloud::new(points),
        dropped,
    })
}

pub fn load_ascii(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii(&text, path)
}

/// Loads a cloud by extension: `.bin` is KITTI binary, anything else ASCII.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => load_kitti_bin(path),
        _ => load_ascii(path),
    }
}

/// Keeps points with `|x| <= side/2` and `|y| <= side/2`, both edges inclusive.
pub fn crop_window(cloud: &PointCloud, side: f64) -> PointCloud {
    let half = side / 2.0;
    cloud.filtered(|p| p.x.abs() <= half && p.y.abs() <= half)
}

/// Drops returns outside `[Z_MIN, Z_MAX]`.
pub fn discard_outliers(cloud: &PointCloud) -> PointCloud {
    cloud.filtered(|p| (Z_MIN..=Z_MAX).contains(&p.z))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundParams {
    /// Side of the square segmentation cells, meters.
    pub cell: f64,
    /// Points less than this far above the local ground height are ground.
    pub z_margin: f64,
    /// Sensor-frame height below which a cell minimum counts as ground
    /// evidence. Everything below it is ground in cells that have evidence.
    pub ceiling: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            cell: 1.0,
            z_margin: 0.3,
            ceiling: -1.2,
        }
    }
}

const MIN_CELL_POINTS: usize = 3;

/// Grid-based ground segmentation; returns the non-ground points.
///
/// Each cell's ground height is its minimum `z`. Cells with fewer than three
/// points take the median ground height of their eight neighbours instead.
/// A ground height only counts when it lies below `params.ceiling`; in such
/// cells every point under `max(ground + z_margin, ceiling)` is removed.
/// Since every surviving point then sits at or above the ceiling, a second
/// application finds no ground evidence and removes nothing.
pub fn remove_ground(cloud: &PointCloud, params: &GroundParams) -> PointCloud {
    let cloud = discard_outliers(cloud);
    if cloud.is_empty() {
        return cloud;
    }
    let key = |p: &Point3| {
        (
            (p.x / params.cell).floor() as i64,
            (p.y / params.cell).floor() as i64,
        )
    };

    // (count, min z) per occupied cell
    let mut cells: HashMap<(i64, i64), (usize, f64)> = HashMap::new();
    for p in &cloud.points {
        let e = cells.entry(key(p)).or_insert((0, f64::INFINITY));
        e.0 += 1;
        e.1 = e.1.min(p.z);
    }

    let dense_ground = |k: &(i64, i64)| -> Option<f64> {
        cells
            .get(k)
            .filter(|(n, min)| *n >= MIN_CELL_POINTS && *min < params.ceiling)
            .map(|(_, min)| *min)
    };

    let mut ground: HashMap<(i64, i64), f64> = HashMap::new();
    for (&(cx, cy), &(count, min)) in &cells {
        let estimate = if count >= MIN_CELL_POINTS {
            dense_ground(&(cx, cy))
        } else {
            let mut around: Vec<f64> = (-1..=1)
                .flat_map(|dx| (-1..=1).map(move |dy| (dx, dy)))
                .filter(|&d| d != (0, 0))
                .filter_map(|(dx, dy)| dense_ground(&(cx + dx, cy + dy)))
                .collect();
            if around.is_empty() {
                (min < params.ceiling).then_some(min)
            } else {
                Some(median(&mut around))
            }
        };
        if let Some(g) = estimate {
            ground.insert((cx, cy), g);
        }
    }

    cloud.filtered(|p| match ground.get(&key(p)) {
        Some(&g) => p.z >= (g + params.z_margin).max(params.ceiling),
        None => true,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The standard front end: outlier rejection, window crop, then ground removal.
pub fn preprocess(cloud: &PointCloud, side: f64, ground: &GroundParams) -> PointCloud {
    remove_ground(&crop_window(cloud, side), ground)
}
