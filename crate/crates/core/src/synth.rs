//! Deterministic synthetic scenes: vertical pillars and walls seen from a
//! controllable viewpoint, with optional angular occlusion.
//!
//! Viewpoint convention: a pose `(tx, ty, yaw)` describes the sensor, and the
//! scene as seen from it is `R(-yaw) * (p - t)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::GroundTruthPose;
use crate::pointcloud::{Point3, PointCloud};

/// Vertical and horizontal sampling pitch of generated structures, meters.
pub const SPACING: f64 = 0.2;

/// Angular sector `[start, start + width)` in degrees, measured
/// counter-clockwise from `+x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub start_deg: f64,
    pub width_deg: f64,
}

impl Sector {
    pub fn new(start_deg: f64, width_deg: f64) -> Self {
        Self { start_deg, width_deg }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let bearing = y.atan2(x).to_degrees().rem_euclid(360.0);
        (bearing - self.start_deg).rem_euclid(360.0) < self.width_deg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub pillars: usize,
    pub walls: usize,
    pub occlusion: Option<Sector>,
    /// Points farther than this from the sensor are not generated.
    pub range: f64,
}

impl SceneSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            pillars: 40,
            walls: 8,
            occlusion: None,
            range: 30.0,
        }
    }

    pub fn empty(seed: u64) -> Self {
        Self {
            pillars: 0,
            walls: 0,
            ..Self::new(seed)
        }
    }
}

/// A vertical column of points from `z = 0` up to `height`.
pub fn pillar_points(x: f64, y: f64, height: f64) -> Vec<Point3> {
    let n = (height / SPACING).round() as usize;
    (0..=n)
        .map(|k| Point3::new(x, y, (k as f64 * SPACING).min(height)))
        .collect()
}

/// A vertical planar strip from `(x0, y0)` to `(x1, y1)`.
pub fn wall_points(x0: f64, y0: f64, x1: f64, y1: f64, height: f64) -> Vec<Point3> {
    let len = (x1 - x0).hypot(y1 - y0);
    let steps = (len / SPACING).round().max(1.0) as usize;
    let mut pts = Vec::new();
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        pts.extend(pillar_points(x0 + t * (x1 - x0), y0 + t * (y1 - y0), height));
    }
    pts
}

/// Random structure layout around the origin.
fn layout(rng: &mut ChaCha8Rng, pillars: usize, walls: usize, range: f64) -> Vec<Point3> {
    let mut pts = Vec::new();
    let radial = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        // uniform over the annulus area
        let r = rng.gen_range(lo * lo..hi * hi).sqrt();
        let a = rng.gen_range(0.0..2.0 * PI);
        (r * a.cos(), r * a.sin())
    };
    for _ in 0..pillars {
        let (x, y) = radial(rng, 3.0, range.max(3.5));
        let h = rng.gen_range(2.0..12.0);
        pts.extend(pillar_points(x, y, h));
    }
    for _ in 0..walls {
        let (cx, cy) = radial(rng, 5.0, range.max(5.5));
        let dir = rng.gen_range(0.0..PI);
        let half = 0.5 * rng.gen_range(4.0..16.0);
        let h = rng.gen_range(2.0..8.0);
        let (dx, dy) = (half * dir.cos(), half * dir.sin());
        pts.extend(wall_points(cx - dx, cy - dy, cx + dx, cy + dy, h));
    }
    pts
}

/// Builds the scene described by `spec`. Same seed, same cloud.
pub fn generate(spec: &SceneSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pts = layout(&mut rng, spec.pillars, spec.walls, spec.range)
        .into_iter()
        .filter(|p| p.x.hypot(p.y) <= spec.range)
        .filter(|p| !spec.occlusion.is_some_and(|s| s.contains(p.x, p.y)))
        .collect();
    PointCloud::new(pts)
}

/// The cloud as seen from a sensor at `(tx, ty, yaw_deg)`, minus any points
/// whose new bearing falls inside `occlusion`.
pub fn perturb(cloud: &PointCloud, tx: f64, ty: f64, yaw_deg: f64, occlusion: Option<Sector>) -> PointCloud {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (dx, dy) = (p.x - tx, p.y - ty);
            Point3 {
                x: c * dx + s * dy,
                y: -s * dx + c * dy,
                ..*p
            }
        })
        .filter(|p| !occlusion.is_some_and(|o| o.contains(p.x, p.y)))
        .collect();
    PointCloud {
        points,
        frame_id: cloud.frame_id,
    }
}

/// Keeps points within `range` of the sensor.
pub fn mask_range(cloud: &PointCloud, range: f64) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().copied().filter(|p| p.x.hypot(p.y) <= range).collect(),
        frame_id: cloud.frame_id,
    }
}

/// A drive through a synthetic world: one cloud per keyframe plus the
/// sensor poses it was captured from.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<GroundTruthPose>,
}

/// Parameters of [`loop_sequence`].
#[derive(Clone, Copy, Debug)]
pub struct LoopSpec {
    pub seed: u64,
    /// Total keyframes.
    pub frames: usize,
    /// Distance between consecutive keyframes, meters.
    pub step: f64,
    /// Rectangle sides of the loop, meters.
    pub width: f64,
    pub height: f64,
    /// Sideways offset applied once the loop closes, meters.
    pub lane_offset: f64,
    pub sensor_range: f64,
}

impl Default for LoopSpec {
    fn default() -> Self {
        Self {
            seed: 2,
            frames: 200,
            step: 2.0,
            width: 100.0,
            height: 60.0,
            lane_offset: 1.5,
            sensor_range: 30.0,
        }
    }
}

/// Point at arc length `s` along the rectangle, with the heading there.
fn rectangle_at(s: f64, w: f64, h: f64) -> (f64, f64, f64) {
    let s = s.rem_euclid(2.0 * (w + h));
    if s < w {
        (s, 0.0, 0.0)
    } else if s < w + h {
        (w, s - w, PI / 2.0)
    } else if s < 2.0 * w + h {
        (w - (s - w - h), h, PI)
    } else {
        (0.0, h - (s - 2.0 * w - h), -PI / 2.0)
    }
}

/// Drives around a rectangle once and keeps going, so the frames after the
/// first lap revisit the start with a sideways lane offset.
pub fn loop_sequence(spec: &LoopSpec) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let perimeter = 2.0 * (w + h);

    // structures scattered in a band around the track
    let margin = spec.sensor_range;
    let area = (w + 2.0 * margin) * (h + 2.0 * margin);
    let count = (area / 80.0) as usize;
    let mut world = Vec::new();
    for k in 0..count {
        let x = rng.gen_range(-margin..w + margin);
        let y = rng.gen_range(-margin..h + margin);
        // keep the road itself clear
        let on_road = (y.abs() < 4.0 || (y - h).abs() < 4.0) && (-4.0..w + 4.0).contains(&x)
            || (x.abs() < 4.0 || (x - w).abs() < 4.0) && (-4.0..h + 4.0).contains(&y);
        if on_road {
            continue;
        }
        if k % 3 == 0 {
            let dir = rng.gen_range(0.0..PI);
            let half = 0.5 * rng.gen_range(5.0..25.0);
            let (dx, dy) = (half * dir.cos(), half * dir.sin());
            world.extend(wall_points(x - dx, y - dy, x + dx, y + dy, rng.gen_range(2.0..8.0)));
        } else {
            world.extend(pillar_points(x, y, rng.gen_range(2.0..12.0)));
        }
    }
    let world = PointCloud::new(world);

    let mut clouds = Vec::with_capacity(spec.frames);
    let mut poses = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let s = i as f64 * spec.step;
        let (mut x, mut y, yaw) = rectangle_at(s, w, h);
        if s >= perimeter {
            // offset to the left of the heading
            x -= spec.lane_offset * yaw.sin();
            y += spec.lane_offset * yaw.cos();
        }
        let view = mask_range(&perturb(&world, x, y, yaw.to_degrees(), None), spec.sensor_range);
        clouds.push(view.with_frame_id(i as u64));
        poses.push(GroundTruthPose::planar(i as u64, x, y, yaw));
    }
    Sequence { clouds, poses }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_gives_empty_cloud() {
        assert!(generate(&SceneSpec::empty(3)).is_empty());
    }

    #[test]
    fn single_pillar_by_construction() {
        let pts = pillar_points(10.0, 0.0, 5.0);
        assert_eq!(pts.len(), 26);
        assert!(pts.iter().all(|p| p.x == 10.0 && p.y == 0.0 && (0.0..=5.0).contains(&p.z)));
    }

    #[test]
    fn same_seed_same_scene() {
        assert_eq!(generate(&SceneSpec::new(42)), generate(&SceneSpec::new(42)));
        assert_ne!(generate(&SceneSpec::new(42)), generate(&SceneSpec::new(43)));
    }

    #[test]
    fn generated_points_respect_range() {
        let spec = SceneSpec::new(5);
        assert!(generate(&spec).points.iter().all(|p| p.x.hypot(p.y) <= spec.range));
    }

    #[test]
    fn identity_perturbation() {
        let c = generate(&SceneSpec::new(1));
        assert_eq!(perturb(&c, 0.0, 0.0, 0.0, None), c);
    }

    #[test]
    fn yaw_rotates_scene_opposite_to_viewpoint() {
        let c = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]);
        let p = perturb(&c, 0.0, 0.0, 90.0, None).points[0];
        assert!(p.x.abs() < 1e-12 && (p.y + 1.0).abs() < 1e-12);
    }

    #[test]
    fn occluded_sector_is_empty() {
        let c = generate(&SceneSpec::new(2));
        let sector = Sector::new(0.0, 71.0);
        let out = perturb(&c, 2.0, -1.0, 15.0, Some(sector));
        assert!(!out.is_empty());
        for p in &out.points {
            let bearing = p.y.atan2(p.x).to_degrees().rem_euclid(360.0);
            assert!(!(0.0..71.0).contains(&bearing), "bearing {bearing}");
        }
        let spec = SceneSpec {
            occlusion: Some(Sector::new(300.0, 71.0)),
            ..SceneSpec::new(2)
        };
        // the sector wraps through 0 degrees
        for p in &generate(&spec).points {
            let bearing = p.y.atan2(p.x).to_degrees().rem_euclid(360.0);
            assert!((11.0..300.0).contains(&bearing));
        }
    }

    #[test]
    fn perturb_then_inverse_is_identity() {
        let c = generate(&SceneSpec::new(9));
        let (tx, ty, yaw) = (3.5, -2.0, 37.0f64);
        let fwd = perturb(&c, tx, ty, yaw, None);
        // inverse of (t, R) is (-R^T t, R^T)
        let (s, co) = yaw.to_radians().sin_cos();
        let (itx, ity) = (-(co * tx + s * ty), -(-s * tx + co * ty));
        let back = perturb(&fwd, itx, ity, -yaw, None);
        for (a, b) in c.points.iter().zip(&back.points) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && a.z == b.z);
        }
    }

    #[test]
    fn loop_sequence_revisits_start() {
        let seq = loop_sequence(&LoopSpec::default());
        assert_eq!(seq.clouds.len(), 200);
        let first = &seq.poses[0];
        let revisit = &seq.poses[160];
        let d = (first.position[0] - revisit.position[0]).hypot(first.position[1] - revisit.position[1]);
        assert!((d - 1.5).abs() < 1e-9);
        assert!(seq.clouds.iter().all(|c| !c.is_empty()));
    }
}
