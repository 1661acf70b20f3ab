//! Log-magnitude spectra of BEV images and their polar unrolling.
//!
//! The magnitude of a 2D DFT ignores cyclic translations of its input, and a
//! rotation of the input rotates the spectrum by the same angle. Sampling the
//! centre of the spectrum on a polar grid therefore turns scene yaw into a
//! circular column shift of the resulting descriptor.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::Read;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::bev::BevImage;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centred log-magnitude spectrum, `log(1 + |DFT|)`, with the dc term at
/// `(size/2, size/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbevImage {
    mag: Vec<f64>,
    size: usize,
}

impl FbevImage {
    pub fn from_data(size: usize, mag: Vec<f64>) -> Result<Self> {
        if mag.len() != size * size {
            return Err(Error::param(
                "size",
                format!("expected {} values, got {}", size * size, mag.len()),
            ));
        }
        Ok(Self { mag, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.mag
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mag[row * self.size + col]
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }
}

/// Unnormalized 2D forward DFT of a real square image, row-major.
pub(crate) fn dft2(data: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    // rows
    fft.process(&mut buf);
    // columns, via transpose
    let mut t = vec![Complex::new(0.0, 0.0); n * n];
    transpose(&buf, &mut t, n);
    fft.process(&mut t);
    transpose(&t, &mut buf, n);
    buf
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], n: usize) {
    for r in 0..n {
        for c in 0..n {
            dst[c * n + r] = src[r * n + c];
        }
    }
}

/// FBEV image: `log(1 + |DFT2(img)|)`, shifted so dc sits at the centre.
pub fn fbev(img: &BevImage) -> FbevImage {
    let n = img.bins();
    let spec = dft2(img.data(), n);
    let half = n / 2;
    let mut mag = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = ((r + half) % n, (c + half) % n);
            mag[sr * n + sc] = spec[r * n + c].norm().ln_1p();
        }
    }
    FbevImage { mag, size: n }
}

/// `rings x sectors` polar unrolling of the centre of an FBEV image.
///
/// Rows index radial frequency, columns angular direction. Values are kept
/// at `f32` precision so that serialized descriptors reload bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct FrescoDescriptor {
    data: Vec<f32>,
    rings: usize,
    sectors: usize,
}

const DESCRIPTOR_MAGIC: &[u8; 4] = b"FRSC";

impl FrescoDescriptor {
    pub fn from_data(rings: usize, sectors: usize, data: Vec<f32>) -> Result<Self> {
        if rings == 0 || sectors == 0 {
            return Err(Error::param("rings", "descriptor dimensions must be positive"));
        }
        if data.len() != rings * sectors {
            return Err(Error::param(
                "sectors",
                format!("expected {} values, got {}", rings * sectors, data.len()),
            ));
        }
        Ok(Self {
            data,
            rings,
            sectors,
        })
    }

    pub fn zeros(rings: usize, sectors: usize) -> Self {
        Self {
            data: vec![0.0; rings * sectors],
            rings,
            sectors,
        }
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn sectors(&self) -> usize {
        self.sectors
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, ring: usize, sector: usize) -> f32 {
        self.data[ring * self.sectors + sector]
    }

    pub fn row(&self, ring: usize) -> &[f32] {
        &self.data[ring * self.sectors..(ring + 1) * self.sectors]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Elementwise scaling, mostly useful in tests.
    pub fn scaled(&self, s: f32) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }

    pub(crate) fn map_data(&self, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rings {
            for j in 0..self.sectors {
                data.push(f(i, j));
            }
        }
        Self { data, ..*self }
    }

    /// `FRSC`, `u32` rings, `u32` sectors, then row-major little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        self.write_into(&mut out);
        out
    }

    pub(crate) fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(DESCRIPTOR_MAGIC);
        out.extend_from_slice(&(self.rings as u32).to_le_bytes());
        out.extend_from_slice(&(self.sectors as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = crate::io::Cursor::new(bytes);
        let d = Self::read_from(&mut cursor)?;
        if cursor.position() != bytes.len() as u64 {
            return Err(Error::Format {
                offset: cursor.position(),
                msg: "trailing bytes after descriptor".into(),
            });
        }
        Ok(d)
    }

    pub(crate) fn read_from<R: Read>(r: &mut crate::io::Cursor<R>) -> Result<Self> {
        let magic = r.read_array::<4>()?;
        if &magic != DESCRIPTOR_MAGIC {
            return Err(Error::Format {
                offset: r.position() - 4,
                msg: "bad descriptor magic".into(),
            });
        }
        let rings = r.read_u32()? as usize;
        let sectors = r.read_u32()? as usize;
        let mut data = Vec::with_capacity(rings * sectors);
        for _ in 0..rings * sectors {
            data.push(r.read_f32()?);
        }
        Self::from_data(rings, sectors, data)
    }
}

/// Bilinear sample of the spectrum. Positions further than `crop/2` from the
/// centre along either axis evaluate to 0.
fn sample(f: &FbevImage, crop: usize, row: f64, col: f64) -> f64 {
    let c = f.center() as isize;
    let half = (crop / 2) as isize;
    let n = f.size() as isize;
    let at = |r: isize, k: isize| -> f64 {
        if (r - c).abs() > half || (k - c).abs() > half || r < 0 || k < 0 || r >= n || k >= n {
            0.0
        } else {
            f.get(r as usize, k as usize)
        }
    };
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    at(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + at(r0 + 1, c0) * fr * (1.0 - fc)
        + at(r0, c0 + 1) * (1.0 - fr) * fc
        + at(r0 + 1, c0 + 1) * fr * fc
}

/// Unrolls the central `crop x crop` region into a `rings x sectors` polar
/// array. Ring `i` sits at radius `(i + 1) * (crop/2) / (rings + 1)` and
/// sector `j` at angle `j * 2pi / sectors`; the dc term is excluded.
pub fn unroll_polar(
    f: &FbevImage,
    crop: usize,
    rings: usize,
    sectors: usize,
) -> Result<FrescoDescriptor> {
    if crop > f.size() {
        return Err(Error::param(
            "crop",
            format!("crop {crop} exceeds spectrum size {}", f.size()),
        ));
    }
    if crop < 2 {
        return Err(Error::param("crop", "crop must be at least 2"));
    }
    if rings == 0 {
        return Err(Error::param("rings", "need at least one ring"));
    }
    if sectors == 0 || !sectors.is_multiple_of(2) {
        return Err(Error::param("sectors", format!("must be even and positive, got {sectors}")));
    }
    let c = f.center() as f64;
    let step = (crop as f64 / 2.0) / (rings + 1) as f64;
    let mut data = Vec::with_capacity(rings * sectors);
    for i in 0..rings {
        let radius = (i + 1) as f64 * step;
        for j in 0..sectors {
            let theta = j as f64 * 2.0 * PI / sectors as f64;
            let v = sample(f, crop, c + radius * theta.cos(), c + radius * theta.sin());
            data.push(v as f32);
        }
    }
    FrescoDescriptor::from_data(rings, sectors, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n^4) DFT magnitude, independent of the FFT path.
    fn naive_mag(data: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let phase = -2.0 * PI * ((u * r) as f64 + (v * c) as f64) / n as f64;
                        acc += Complex::from_polar(data[r * n + c], phase);
                    }
                }
                out[u * n + v] = acc.norm();
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> BevImage {
        let data = (0..n * n)
            .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.0..10.0) } else { 0.0 })
            .collect();
        BevImage::from_data(80.0, n, data).unwrap()
    }

    fn circshift(img: &BevImage, a: usize, b: usize) -> BevImage {
        let n = img.bins();
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[((r + a) % n) * n + (c + b) % n] = img.get(r, c);
            }
        }
        BevImage::from_data(img.side(), n, out).unwrap()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let img = random_image(&mut rng, n);
        let f = fbev(&img);
        let direct = naive_mag(img.data(), n);
        for u in 0..n {
            for v in 0..n {
                let shifted = f.get((u + n / 2) % n, (v + n / 2) % n);
                assert!((shifted - direct[u * n + v].ln_1p()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_image_zero_spectrum() {
        let f = fbev(&BevImage::zeros(80.0, 16));
        assert!(f.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_image_dc_only() {
        let n = 16;
        let img = BevImage::from_data(80.0, n, vec![2.5; n * n]).unwrap();
        let f = fbev(&img);
        for r in 0..n {
            for c in 0..n {
                let v = f.get(r, c);
                if (r, c) == (n / 2, n / 2) {
                    assert!((v - (2.5 * (n * n) as f64).ln_1p()).abs() < 1e-12);
                } else {
                    assert!(v.abs() < 1e-12, "({r},{c}) = {v}");
                }
            }
        }
    }

    #[test]
    fn cyclic_shift_by_7_3_with_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 16;
        let img = random_image(&mut rng, n);
        let moved = circshift(&img, 7, 3);
        let a = naive_mag(img.data(), n);
        let b = naive_mag(moved.data(), n);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        let fa = fbev(&img);
        let fb = fbev(&moved);
        for (x, y) in fa.data().iter().zip(fb.data()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn spectrum_is_centro_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 32;
        let f = fbev(&random_image(&mut rng, n));
        let c = n / 2;
        for r in 1..n {
            for k in 1..n {
                let (mr, mk) = (2 * c - r, 2 * c - k);
                let (x, y) = (f.get(r, k), f.get(mr, mk));
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    fn analytic_fbev(n: usize, g: impl Fn(f64, f64) -> f64) -> FbevImage {
        let c = (n / 2) as f64;
        let mut mag = Vec::with_capacity(n * n);
        for r in 0..n {
            for k in 0..n {
                mag.push(g(r as f64 - c, k as f64 - c));
            }
        }
        FbevImage::from_data(n, mag).unwrap()
    }

    #[test]
    fn zero_spectrum_zero_descriptor() {
        let f = FbevImage::from_data(64, vec![0.0; 64 * 64]).unwrap();
        let d = unroll_polar(&f, 32, 8, 24).unwrap();
        assert!(d.data().iter().all(|v| *v == 0.0));
    }

    fn row_std(d: &FrescoDescriptor, i: usize) -> f64 {
        let row: Vec<f64> = d.row(i).iter().map(|&v| v as f64).collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt()
    }

    #[test]
    fn radial_spectrum_gives_constant_rows() {
        // bilinear sampling is exact up to h^2/8 * |f''|, so a wide profile
        // keeps the interpolation error below the tolerance
        let f = analytic_fbev(128, |u, v| 3.0 * (-(u * u + v * v) / (2.0 * 1500.0f64.powi(2))).exp());
        let d = unroll_polar(&f, 64, 32, 120).unwrap();
        for i in 0..d.rings() {
            let std = row_std(&d, i);
            assert!(std < 1e-6, "ring {i}: std {std}");
        }
    }

    #[test]
    fn sharper_radial_profile_within_interpolation_bound() {
        let sigma = 12.0f64;
        let f = analytic_fbev(128, |u, v| 3.0 * (-(u * u + v * v) / (2.0 * sigma * sigma)).exp());
        let d = unroll_polar(&f, 64, 32, 120).unwrap();
        // |f''| <= 3 / sigma^2 for this profile, grid step 1
        let bound = 3.0 / (sigma * sigma) / 8.0 * 2.0;
        for i in 0..d.rings() {
            assert!(row_std(&d, i) < bound, "ring {i}");
        }
    }

    #[test]
    fn rotated_spectrum_shifts_columns() {
        let sectors = 120;
        let bumps = [(10.0, 0.3, 2.0), (20.0, 2.0, 1.5), (6.0, -1.2, 3.0), (25.0, -2.5, 1.0)];
        let field = |rot: f64| {
            move |u: f64, v: f64| {
                bumps
                    .iter()
                    .map(|&(rad, ang, amp)| {
                        // the bump and its centro-symmetric twin
                        let mut s = 0.0;
                        for a in [ang + rot, ang + rot + PI] {
                            let (bu, bv) = (rad * a.cos(), rad * a.sin());
                            let d2 = (u - bu).powi(2) + (v - bv).powi(2);
                            s += amp * (-d2 / 50.0).exp();
                        }
                        s
                    })
                    .sum::<f64>()
            }
        };
        let k = 7;
        let rot = 2.0 * PI * k as f64 / sectors as f64;
        let a = unroll_polar(&analytic_fbev(128, field(0.0)), 64, 32, sectors).unwrap();
        let b = unroll_polar(&analytic_fbev(128, field(rot)), 64, 32, sectors).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..32 {
            for j in 0..sectors {
                let expected = a.get(i, (j + sectors - k) % sectors) as f64;
                worst = worst.max((b.get(i, j) as f64 - expected).abs());
            }
        }
        // bilinear interpolation of a smooth field with peak 3
        assert!(worst < 0.05, "worst deviation {worst}");
    }

    #[test]
    fn crop_larger_than_spectrum_rejected() {
        let f = FbevImage::from_data(16, vec![0.0; 256]).unwrap();
        assert!(matches!(unroll_polar(&f, 17, 4, 8), Err(Error::Parameter { name: "crop", .. })));
        assert!(matches!(unroll_polar(&f, 16, 4, 7), Err(Error::Parameter { name: "sectors", .. })));
    }

    #[test]
    fn descriptor_bytes_layout() {
        let d = FrescoDescriptor::from_data(2, 4, (0..8).map(|v| v as f32).collect()).unwrap();
        let b = d.to_bytes();
        assert_eq!(&b[..4], b"FRSC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 4);
        assert_eq!(b.len(), 12 + 32);
        assert_eq!(FrescoDescriptor::from_bytes(&b).unwrap(), d);
        assert!(FrescoDescriptor::from_bytes(&b[..20]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn descriptor_has_half_period(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = fbev(&random_image(&mut rng, 64));
            let d = unroll_polar(&f, 32, 12, 40).unwrap();
            for i in 0..12 {
                for j in 0..20 {
                    prop_assert!((d.get(i, j) - d.get(i, j + 20)).abs() <= 1e-6 * d.get(i, j).abs().max(1.0));
                }
            }
        }

        #[test]
        fn scaling_never_decreases_magnitude(seed in any::<u64>(), s in 1.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, 32);
            let scaled = BevImage::from_data(80.0, 32, img.data().iter().map(|v| v * s).collect()).unwrap();
            let (a, b) = (fbev(&img), fbev(&scaled));
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(*y >= *x - 1e-9);
            }
        }

        #[test]
        fn descriptor_roundtrips_through_bytes(data in prop::collection::vec(-1e6f32..1e6, 12)) {
            let d = FrescoDescriptor::from_data(3, 4, data).unwrap();
            prop_assert_eq!(FrescoDescriptor::from_bytes(&d.to_bytes()).unwrap(), d);
        }
    }
}
