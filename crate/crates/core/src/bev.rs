//! Cartesian bird's-eye-view height images.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud, Z_MIN};

/// Height offset added to every return so that empty bins (0) sit below
/// every real measurement.
pub const Z_FLOOR: f64 = Z_MIN;

/// `bins x bins` grid of per-bin maximum heights over a `side x side` meter
/// window centred on the sensor. Row index follows `x`, column index `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevImage {
    data: Vec<f64>,
    side: f64,
    bins: usize,
}

impl BevImage {
    pub fn zeros(side: f64, bins: usize) -> Self {
        Self {
            data: vec![0.0; bins * bins],
            side,
            bins,
        }
    }

    /// Wraps raw row-major data. Values must be finite and non-negative.
    pub fn from_data(side: f64, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bins * bins {
            return Err(Error::param(
                "bins",
                format!("expected {} values, got {}", bins * bins, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("data", "BEV heights must be finite and >= 0"));
        }
        Ok(Self { data, side, bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.bins + col]
    }

    /// Writes a binary 16-bit PGM with heights in millimeters.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("P5\n{} {}\n65535\n", self.bins, self.bins).into_bytes();
        for v in &self.data {
            let mm = (v * 1000.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&mm.to_be_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

/// Bin of a point: `round((x + side/2) / (side/bins))`, likewise for `y`,
/// rounding half away from zero and clamping to `[0, bins - 1]`.
pub fn bin_index(p: &Point3, side: f64, bins: usize) -> Result<(usize, usize)> {
    let half = side / 2.0;
    if p.x.abs() > half || p.y.abs() > half {
        return Err(Error::OutOfWindow {
            x: p.x,
            y: p.y,
            side,
        });
    }
    let res = side / bins as f64;
    let idx = |v: f64| (((v + half) / res).round() as usize).min(bins - 1);
    Ok((idx(p.x), idx(p.y)))
}

/// Projects a ground-removed cloud into a max-height BEV image. Points outside
/// the window or below the floor are ignored.
pub fn make_bev(cloud: &PointCloud, side: f64, bins: usize) -> Result<BevImage> {
    if bins < 8 {
        return Err(Error::param("bins", format!("need at least 8 bins per side, got {bins}")));
    }
    if side <= 0.0 || !side.is_finite() {
        return Err(Error::param("window", format!("side must be positive, got {side}")));
    }
    let mut img = BevImage::zeros(side, bins);
    for p in &cloud.points {
        if p.z < Z_FLOOR {
            continue;
        }
        if let Ok((r, c)) = bin_index(p, side, bins) {
            let cell = &mut img.data[r * bins + c];
            *cell = cell.max(p.z - Z_FLOOR);
        }
    }
    Ok(img)
}
