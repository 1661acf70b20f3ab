//! Two-stage relative pose estimation.
//!
//! Stage one flattens the upper part of each ground-removed cloud into a
//! sparse 2D point set with normals and runs point-to-plane ICP twice, seeded
//! with the descriptor rotation and with that rotation plus 180 degrees. The
//! branch with the smaller mean squared error wins. Stage two optionally
//! refines the result with point-to-point ICP on the 3D clouds.
//!
//! Poses map query-frame points into the candidate frame:
//! `p_cand = R(yaw) * p_query + t`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::{squared_distance, KdTree};
use crate::pointcloud::PointCloud;

/// Rotation in degrees implied by a descriptor column shift.
pub fn shift_to_rotation(best_shift: usize, sectors: usize) -> f64 {
    best_shift as f64 / sectors as f64 * 360.0
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactParams {
    /// Side of the coarse extraction cells, meters.
    pub grid: f64,
    /// Maximum number of points kept per coarse cell.
    pub cap: usize,
    /// Downsampling voxel, meters.
    pub voxel: f64,
    /// Neighbourhood size for normal estimation.
    pub neighbors: usize,
    /// Points whose minor/major eigenvalue ratio exceeds this get no residual.
    pub max_eigen_ratio: f64,
}

impl Default for CompactParams {
    fn default() -> Self {
        Self {
            grid: 4.0,
            cap: 10,
            voxel: 0.4,
            neighbors: 10,
            max_eigen_ratio: 0.8,
        }
    }
}

pub const MIN_COMPACT_POINTS: usize = 10;

/// Flattened structure points with unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct Compact2dCloud {
    pub points: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    /// False where the neighbourhood is too isotropic for a usable normal.
    pub planar: Vec<bool>,
}

impl Compact2dCloud {
    /// Estimates normals for an arbitrary 2D point set.
    pub fn from_points(points: Vec<[f64; 2]>, params: &CompactParams) -> Result<Self> {
        if points.len() < MIN_COMPACT_POINTS {
            return Err(Error::InsufficientStructure {
                found: points.len(),
                needed: MIN_COMPACT_POINTS,
            });
        }
        let tree = KdTree::from_points(&points);
        let mut normals = Vec::with_capacity(points.len());
        let mut planar = Vec::with_capacity(points.len());
        for p in &points {
            let nb = tree.knn(p, params.neighbors.max(3));
            let k = nb.len() as f64;
            let (mx, my) = nb.iter().fold((0.0, 0.0), |(x, y), n| {
                let q = tree.point(n.index);
                (x + q[0] / k, y + q[1] / k)
            });
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for n in &nb {
                let q = tree.point(n.index);
                let (dx, dy) = (q[0] - mx, q[1] - my);
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            let (normal, ratio) = minor_axis(sxx / k, sxy / k, syy / k);
            normals.push(normal);
            planar.push(ratio <= params.max_eigen_ratio);
        }
        Ok(Self {
            points,
            normals,
            planar,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unit eigenvector of the smaller eigenvalue of a symmetric 2x2 matrix and
/// the eigenvalue ratio `minor / major`.
fn minor_axis(a: f64, b: f64, c: f64) -> ([f64; 2], f64) {
    let mean = 0.5 * (a + c);
    let diff = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (major, minor) = (mean + diff, mean - diff);
    let ratio = if major > 0.0 { (minor / major).max(0.0) } else { 1.0 };
    // major axis angle, normal is perpendicular to it
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    ([-phi.sin(), phi.cos()], ratio)
}

/// Voxel key to (sum x, sum y, count).
type VoxelSums = BTreeMap<(i64, i64), (f64, f64, usize)>;

/// Extracts the compact 2D cloud: per coarse cell keep points above the
/// cell's height midpoint, flatten, voxel-downsample, cap the per-cell count,
/// then estimate normals.
pub fn extract_compact_2d(cloud: &PointCloud, params: &CompactParams) -> Result<Compact2dCloud> {
    let ratio = (params.grid / params.voxel).round().max(1.0) as i64;
    let vkey = |x: f64| (x / params.voxel).floor() as i64;
    let cell_of = |vx: i64, vy: i64| (vx.div_euclid(ratio), vy.div_euclid(ratio));

    let mut heights: BTreeMap<(i64, i64), (f64, f64)> = BTreeMap::new();
    for p in &cloud.points {
        let e = heights
            .entry(cell_of(vkey(p.x), vkey(p.y)))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(p.z);
        e.1 = e.1.max(p.z);
    }

    // cell -> voxel -> (sum x, sum y, count)
    let mut voxels: BTreeMap<(i64, i64), VoxelSums> = BTreeMap::new();
    for p in &cloud.points {
        let (vx, vy) = (vkey(p.x), vkey(p.y));
        let cell = cell_of(vx, vy);
        let (lo, hi) = heights[&cell];
        if hi > lo && p.z <= 0.5 * (lo + hi) {
            continue;
        }
        let v = voxels.entry(cell).or_default().entry((vx, vy)).or_insert((0.0, 0.0, 0));
        v.0 += p.x;
        v.1 += p.y;
        v.2 += 1;
    }

    let mut points = Vec::new();
    for cell in voxels.values() {
        let centroids: Vec<[f64; 2]> = cell
            .values()
            .map(|&(sx, sy, n)| [sx / n as f64, sy / n as f64])
            .collect();
        if centroids.len() <= params.cap {
            points.extend(centroids);
        } else {
            let n = centroids.len();
            points.extend((0..params.cap).map(|k| centroids[k * n / params.cap]));
        }
    }
    Compact2dCloud::from_points(points, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NicpParams {
    pub max_iterations: usize,
    /// Correspondence gate at the first iteration, meters.
    pub gate_start: f64,
    /// Correspondence gate at the last iteration, meters.
    pub gate_end: f64,
    pub tol_translation: f64,
    pub tol_yaw: f64,
}

impl Default for NicpParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            gate_start: 2.0,
            gate_end: 0.5,
            tol_translation: 1e-3,
            tol_yaw: 1e-4,
        }
    }
}

impl NicpParams {
    fn gate(&self, iteration: usize) -> f64 {
        if self.max_iterations <= 1 {
            return self.gate_end;
        }
        let t = iteration as f64 / (self.max_iterations - 1) as f64;
        self.gate_start + (self.gate_end - self.gate_start) * t
    }
}

/// Planar rigid transform with its fit quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Se2Pose {
    pub tx: f64,
    pub ty: f64,
    /// Radians in `(-pi, pi]`.
    pub yaw: f64,
    /// Mean over source points of the squared nearest-neighbour distance,
    /// each term capped at `gate_start^2`.
    pub mse: f64,
    pub converged: bool,
}

impl Se2Pose {
    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            yaw: 0.0,
            mse: 0.0,
            converged: true,
        }
    }

    pub fn new(tx: f64, ty: f64, yaw: f64) -> Self {
        Self {
            tx,
            ty,
            yaw: normalize_angle(yaw),
            mse: 0.0,
            converged: true,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty]
    }
}

/// Per-iteration record: objective on the iteration's correspondences before
/// and after the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationTrace {
    pub gate: f64,
    pub correspondences: usize,
    pub before: f64,
    pub after: f64,
}

struct Pair {
    src: [f64; 2],
    dst: [f64; 2],
    normal: [f64; 2],
}

fn point_to_plane(pairs: &[Pair], x: &[f64; 3]) -> f64 {
    let (s, c) = x[2].sin_cos();
    pairs
        .iter()
        .map(|p| {
            let tx = c * p.src[0] - s * p.src[1] + x[0] - p.dst[0];
            let ty = s * p.src[0] + c * p.src[1] + x[1] - p.dst[1];
            let r = p.normal[0] * tx + p.normal[1] * ty;
            r * r
        })
        .sum()
}

fn capped_mse(src: &[[f64; 2]], tree: &KdTree, pose: &Se2Pose, gate: f64) -> f64 {
    if src.is_empty() {
        return f64::INFINITY;
    }
    let cap = gate * gate;
    src.iter()
        .map(|p| tree.nearest(&pose.apply(*p)).map_or(cap, |n| n.dist2.min(cap)))
        .sum::<f64>()
        / src.len() as f64
}

/// 2D point-to-plane ICP from `(0, 0, yaw_init)`.
pub fn nicp_2d(src: &Compact2dCloud, dst: &Compact2dCloud, yaw_init: f64, params: &NicpParams) -> Result<Se2Pose> {
    nicp_2d_traced(src, dst, yaw_init, params).map(|(pose, _)| pose)
}

pub fn nicp_2d_traced(
    src: &Compact2dCloud,
    dst: &Compact2dCloud,
    yaw_init: f64,
    params: &NicpParams,
) -> Result<(Se2Pose, Vec<IterationTrace>)> {
    for c in [src, dst] {
        if c.len() < MIN_COMPACT_POINTS {
            return Err(Error::InsufficientStructure {
                found: c.len(),
                needed: MIN_COMPACT_POINTS,
            });
        }
    }
    let tree = KdTree::from_points(&dst.points);
    let mut x = [0.0, 0.0, yaw_init];
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 0..params.max_iterations {
        let gate = params.gate(it);
        let current = Se2Pose::new(x[0], x[1], x[2]);
        let pairs: Vec<Pair> = src
            .points
            .iter()
            .filter_map(|&s| {
                let n = tree.nearest(&current.apply(s))?;
                (n.dist2 <= gate * gate && dst.planar[n.index]).then(|| Pair {
                    src: s,
                    dst: dst.points[n.index],
                    normal: dst.normals[n.index],
                })
            })
            .collect();
        if pairs.len() < 3 {
            break;
        }

        let (s, c) = x[2].sin_cos();
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for p in &pairs {
            let rs = [c * p.src[0] - s * p.src[1], s * p.src[0] + c * p.src[1]];
            let r = p.normal[0] * (rs[0] + x[0] - p.dst[0]) + p.normal[1] * (rs[1] + x[1] - p.dst[1]);
            // d(R s)/d yaw = perp(R s)
            let j = Vector3::new(p.normal[0], p.normal[1], p.normal[0] * -rs[1] + p.normal[1] * rs[0]);
            h += j * j.transpose();
            g += j * r;
        }
        h += Matrix3::identity() * 1e-9;
        let Some(delta) = h.lu().solve(&-g) else {
            break;
        };

        let before = point_to_plane(&pairs, &x);
        // halve the step until the objective on these pairs does not grow
        let mut step = 1.0;
        let mut next = x;
        let mut after = before;
        for _ in 0..12 {
            let cand = [x[0] + step * delta[0], x[1] + step * delta[1], x[2] + step * delta[2]];
            let e = point_to_plane(&pairs, &cand);
            if e <= before {
                next = cand;
                after = e;
                break;
            }
            step *= 0.5;
        }
        trace.push(IterationTrace {
            gate,
            correspondences: pairs.len(),
            before,
            after,
        });
        let moved = ((next[0] - x[0]).powi(2) + (next[1] - x[1]).powi(2)).sqrt();
        let turned = (next[2] - x[2]).abs();
        x = next;
        if moved < params.tol_translation && turned < params.tol_yaw {
            converged = true;
            break;
        }
    }

    let mut pose = Se2Pose::new(x[0], x[1], x[2]);
    pose.converged = converged;
    pose.mse = capped_mse(&src.points, &tree, &pose, params.gate_start);
    Ok((pose, trace))
}

/// Which seed produced the stage-one pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Seeded with the descriptor rotation.
    Direct,
    /// Seeded with the descriptor rotation plus 180 degrees.
    Flipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stage1Pose {
    pub pose: Se2Pose,
    pub branch: Branch,
}

/// Runs both seeds on precomputed compact clouds.
///
/// A query whose spectrum is the candidate's rotated by `rotation_deg` sees
/// the scene rotated by that angle, so the query-to-candidate yaw is its
/// negative (or that plus 180 degrees).
pub fn stage1_compact(
    query: &Compact2dCloud,
    cand: &Compact2dCloud,
    rotation_deg: f64,
    params: &NicpParams,
) -> Result<Stage1Pose> {
    let seed = -rotation_deg.to_radians();
    let direct = nicp_2d(query, cand, seed, params)?;
    let flipped = nicp_2d(query, cand, seed + PI, params)?;
    Ok(if flipped.mse < direct.mse {
        Stage1Pose {
            pose: flipped,
            branch: Branch::Flipped,
        }
    } else {
        Stage1Pose {
            pose: direct,
            branch: Branch::Direct,
        }
    })
}

pub fn estimate_pose_stage1(
    query: &PointCloud,
    cand: &PointCloud,
    best_shift: usize,
    sectors: usize,
    compact: &CompactParams,
    nicp: &NicpParams,
) -> Result<Stage1Pose> {
    let q = extract_compact_2d(query, compact)?;
    let c = extract_compact_2d(cand, compact)?;
    stage1_compact(&q, &c, shift_to_rotation(best_shift, sectors), nicp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Icp3Params {
    pub max_iterations: usize,
    pub gate_start: f64,
    pub gate_end: f64,
    /// Source downsampling voxel; the candidate cloud is used in full.
    pub voxel: f64,
    /// Correspondences farther than this are left out of the reported MSE.
    pub mse_gate: f64,
    /// Registration counts as successful below this MSE.
    pub success_mse: f64,
    pub tol_translation: f64,
    pub tol_rotation: f64,
}

impl Default for Icp3Params {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            gate_start: 2.0,
            gate_end: 0.5,
            voxel: 0.5,
            mse_gate: 3.0,
            success_mse: 1.5,
            tol_translation: 1e-4,
            tol_rotation: 1e-5,
        }
    }
}

/// Rigid 3D transform produced by the refinement stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub mse: f64,
    pub converged: bool,
    pub success: bool,
}

impl Pose3 {
    pub fn from_se2(p: &Se2Pose) -> (Rotation3<f64>, Vector3<f64>) {
        (
            Rotation3::from_axis_angle(&Vector3::z_axis(), p.yaw),
            Vector3::new(p.tx, p.ty, 0.0),
        )
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `(roll, pitch, yaw)` in radians.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn to_se2(&self) -> Se2Pose {
        let mut p = Se2Pose::new(self.translation.x, self.translation.y, self.euler().2);
        p.mse = self.mse;
        p.converged = self.converged;
        p
    }
}

/// One input point per voxel: the one closest to the voxel centroid.
pub fn voxel_representatives(cloud: &PointCloud, voxel: f64) -> Vec<[f64; 3]> {
    let key = |p: &[f64; 3]| {
        (
            (p[0] / voxel).floor() as i64,
            (p[1] / voxel).floor() as i64,
            (p[2] / voxel).floor() as i64,
        )
    };
    let pts = cloud_coords(cloud);
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    cells
        .values()
        .map(|members| {
            let n = members.len() as f64;
            let c = members.iter().fold([0.0; 3], |a, &i| {
                [a[0] + pts[i][0] / n, a[1] + pts[i][1] / n, a[2] + pts[i][2] / n]
            });
            let best = members
                .iter()
                .min_by(|&&a, &&b| squared_distance(&pts[a], &c).total_cmp(&squared_distance(&pts[b], &c)))
                .unwrap();
            pts[*best]
        })
        .collect()
}

fn cloud_coords(cloud: &PointCloud) -> Vec<[f64; 3]> {
    cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn gated_mse_3d(src: &[[f64; 3]], tree: &KdTree, rot: &Rotation3<f64>, t: &Vector3<f64>, gate: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in src {
        let q = rot * Vector3::from(*p) + t;
        if let Some(nb) = tree.nearest(q.as_slice()) {
            if nb.dist2 <= gate * gate {
                sum += nb.dist2;
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Gated 3D MSE of `query` placed by a planar pose onto `cand`.
pub fn alignment_mse_3d(query: &PointCloud, cand: &PointCloud, pose: &Se2Pose, params: &Icp3Params) -> f64 {
    let src = voxel_representatives(query, params.voxel);
    let dst = cloud_coords(cand);
    if dst.is_empty() {
        return f64::INFINITY;
    }
    let tree = KdTree::from_points(&dst);
    let (rot, t) = Pose3::from_se2(pose);
    gated_mse_3d(&src, &tree, &rot, &t, params.mse_gate)
}

/// Point-to-point ICP on downsampled 3D clouds seeded by a stage-one pose.
/// When it fails to converge, or would end with a larger MSE than its seed,
/// the seed is passed through with `converged = false`.
pub fn refine_pose_3d(query: &PointCloud, cand: &PointCloud, init: &Se2Pose, params: &Icp3Params) -> Result<Pose3> {
    let src = voxel_representatives(query, params.voxel);
    let dst = cloud_coords(cand);
    for c in [&src, &dst] {
        if c.len() < MIN_COMPACT_POINTS {
            return Err(Error::InsufficientStructure {
                found: c.len(),
                needed: MIN_COMPACT_POINTS,
            });
        }
    }
    let tree = KdTree::from_points(&dst);
    let (rot0, t0) = Pose3::from_se2(init);
    let mse0 = gated_mse_3d(&src, &tree, &rot0, &t0, params.mse_gate);
    let (mut rot, mut t) = (rot0, t0);
    let mut converged = false;

    for it in 0..params.max_iterations {
        let gate = if params.max_iterations <= 1 {
            params.gate_end
        } else {
            params.gate_start
                + (params.gate_end - params.gate_start) * it as f64 / (params.max_iterations - 1) as f64
        };
        let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
        for p in &src {
            let s = Vector3::from(*p);
            let q = rot * s + t;
            if let Some(nb) = tree.nearest(q.as_slice()) {
                if nb.dist2 <= gate * gate {
                    pairs.push((s, Vector3::from(dst[nb.index])));
                }
            }
        }
        if pairs.len() < 3 {
            break;
        }
        let (new_rot, new_t) = kabsch(&pairs);
        let dt = (new_t - t).norm();
        let dr = rotation_angle(&(new_rot * rot.inverse()));
        rot = new_rot;
        t = new_t;
        if dt < params.tol_translation && dr < params.tol_rotation {
            converged = true;
            break;
        }
    }

    let mse = gated_mse_3d(&src, &tree, &rot, &t, params.mse_gate);
    if !converged || mse > mse0 {
        return Ok(Pose3 {
            rotation: rot0,
            translation: t0,
            mse: mse0,
            converged: false,
            success: mse0 < params.success_mse,
        });
    }
    Ok(Pose3 {
        rotation: rot,
        translation: t,
        mse,
        converged,
        success: mse < params.success_mse,
    })
}

/// Angle of a rotation, robust to round-off near the identity.
fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let cos = 0.5 * (m.trace() - 1.0);
    let sin = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Closed-form least-squares rigid transform `dst ~ R src + t`.
fn kabsch(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Rotation3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let (cs, cd) = pairs
        .iter()
        .fold((Vector3::zeros(), Vector3::zeros()), |(a, b), (s, d)| (a + s / n, b + d / n));
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut v = v_t.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let r = Rotation3::from_matrix_unchecked(v * u.transpose());
    (r, cd - r * cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point3;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shift_to_rotation_examples() {
        assert_eq!(shift_to_rotation(0, 120), 0.0);
        assert_eq!(shift_to_rotation(30, 120), 90.0);
        assert_eq!(shift_to_rotation(17, 120), 51.0);
        for a in 0..30 {
            for b in 0..30 {
                let lhs = shift_to_rotation(a + b, 120);
                let rhs = shift_to_rotation(a, 120) + shift_to_rotation(b, 120);
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn angle_normalization() {
        assert_abs_diff_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn minor_axis_of_horizontal_spread() {
        let (n, ratio) = minor_axis(4.0, 0.0, 0.01);
        assert_abs_diff_eq!(n[0].abs(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n[1].abs(), 1.0, epsilon = 1e-12);
        assert!(ratio < 0.01);
    }

    fn wall(x0: f64, y0: f64, x1: f64, y1: f64, height: f64) -> Vec<Point3> {
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len / 0.1).round() as usize;
        let mut pts = Vec::new();
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            for k in 0..=(height / 0.2) as usize {
                pts.push(Point3::new(x0 + t * (x1 - x0), y0 + t * (y1 - y0), k as f64 * 0.2));
            }
        }
        pts
    }

    #[test]
    fn empty_cloud_has_no_structure() {
        assert!(matches!(
            extract_compact_2d(&PointCloud::default(), &CompactParams::default()),
            Err(Error::InsufficientStructure { found: 0, .. })
        ));
    }

    #[test]
    fn wall_normals_are_perpendicular() {
        // wall along direction 30 degrees
        let a = 30f64.to_radians();
        let cloud = PointCloud::new(wall(2.0, 1.0, 2.0 + 20.0 * a.cos(), 1.0 + 20.0 * a.sin(), 4.0));
        let c = extract_compact_2d(&cloud, &CompactParams::default()).unwrap();
        let expected = [-a.sin(), a.cos()];
        for (p, n) in c.points.iter().zip(&c.normals) {
            // collinear: distance from the wall line
            let off = (p[0] - 2.0) * expected[0] + (p[1] - 1.0) * expected[1];
            assert!(off.abs() < 1e-6);
            let cos = (n[0] * expected[0] + n[1] * expected[1]).abs();
            assert!(cos > 5f64.to_radians().cos());
            assert_abs_diff_eq!(n[0].hypot(n[1]), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn pillar_forest_respects_voxel_and_cap() {
        let mut pts = Vec::new();
        for i in -10..10 {
            for j in -10..10 {
                for k in 0..20 {
                    pts.push(Point3::new(i as f64 * 1.3 + 0.05, j as f64 * 1.1 + 0.05, k as f64 * 0.2));
                }
            }
        }
        let params = CompactParams::default();
        let c = extract_compact_2d(&PointCloud::new(pts), &params).unwrap();
        let mut per_voxel: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        let mut per_cell: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for p in &c.points {
            let v = ((p[0] / 0.4).floor() as i64, (p[1] / 0.4).floor() as i64);
            *per_voxel.entry(v).or_default() += 1;
            *per_cell.entry((v.0.div_euclid(10), v.1.div_euclid(10))).or_default() += 1;
        }
        assert!(per_voxel.values().all(|&n| n == 1));
        assert!(per_cell.values().all(|&n| n <= params.cap));
    }

    fn box_room() -> Compact2dCloud {
        // L-shaped walls plus a few free-standing segments
        let mut pts = Vec::new();
        for i in 0..60 {
            let t = i as f64 * 0.4;
            pts.push([-10.0 + t, -8.0]);
            pts.push([-10.0, -8.0 + t * 0.7]);
        }
        for i in 0..20 {
            let t = i as f64 * 0.4;
            pts.push([5.0 + t * 0.8, 3.0 + t * 0.6]);
            pts.push([-3.0 - t * 0.5, 6.0 + t * 0.86]);
            pts.push([8.0, 10.0 - t]);
        }
        Compact2dCloud::from_points(pts, &CompactParams::default()).unwrap()
    }

    fn transformed(c: &Compact2dCloud, pose: &Se2Pose) -> Compact2dCloud {
        // dst = pose(src), so NICP(src -> dst) should return pose
        let pts = c.points.iter().map(|p| pose.apply(*p)).collect();
        Compact2dCloud::from_points(pts, &CompactParams::default()).unwrap()
    }

    #[test]
    fn nicp_identity() {
        let c = box_room();
        let p = nicp_2d(&c, &c, 0.0, &NicpParams::default()).unwrap();
        assert!(p.tx.abs() < 1e-6 && p.ty.abs() < 1e-6 && p.yaw.abs() < 1e-6);
        assert!(p.mse < 1e-6);
        assert!(p.converged);
    }

    #[test]
    fn nicp_recovers_known_transform() {
        let src = box_room();
        let truth = Se2Pose::new(1.5, -0.8, 20f64.to_radians());
        let dst = transformed(&src, &truth);
        let (p, trace) = nicp_2d_traced(&src, &dst, 20f64.to_radians(), &NicpParams::default()).unwrap();
        assert!((p.tx - 1.5).abs() < 0.05 && (p.ty + 0.8).abs() < 0.05, "{p:?}");
        assert!((p.yaw - truth.yaw).abs().to_degrees() < 0.5);
        for t in &trace {
            assert!(t.after <= t.before + 1e-12, "{t:?}");
        }
    }

    #[test]
    fn wrong_branch_has_higher_mse() {
        let src = box_room();
        let dst = transformed(&src, &Se2Pose::new(0.0, 0.0, 20f64.to_radians()));
        let right = nicp_2d(&src, &dst, 20f64.to_radians(), &NicpParams::default()).unwrap();
        let wrong = nicp_2d(&src, &dst, 200f64.to_radians(), &NicpParams::default()).unwrap();
        assert!(wrong.mse > right.mse);
        let s1 = stage1_compact(&src, &dst, 160.0, &NicpParams::default()).unwrap();
        // seeds -160 and 20 degrees; the latter is right
        assert_eq!(s1.branch, Branch::Flipped);
        assert!((s1.pose.yaw.to_degrees() - 20.0).abs() < 0.5);
    }

    fn cloud_from(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    fn structured_3d() -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for p in wall(-15.0, -10.0, 15.0, -10.0, 6.0)
            .into_iter()
            .chain(wall(-15.0, -10.0, -15.0, 12.0, 4.0))
            .chain(wall(6.0, 4.0, 12.0, 14.0, 8.0))
        {
            pts.push([p.x, p.y, p.z]);
        }
        // a sloped roof gives roll/pitch something to hold on to
        for i in 0..40 {
            for j in 0..40 {
                let (x, y) = (-10.0 + i as f64 * 0.25, 0.0 + j as f64 * 0.25);
                pts.push([x, y, 3.0 + 0.3 * x - 0.2 * y]);
            }
        }
        pts
    }

    #[test]
    fn refine_identity() {
        let c = cloud_from(&structured_3d());
        let p = refine_pose_3d(&c, &c, &Se2Pose::identity(), &Icp3Params::default()).unwrap();
        assert!(p.translation.norm() < 1e-6);
        assert!(p.rotation.angle() < 1e-6);
        assert!(p.mse < 1e-12);
        assert!(p.success);
    }

    #[test]
    fn refine_recovers_small_roll() {
        let rot = Rotation3::from_euler_angles(2f64.to_radians(), 0.5f64.to_radians(), 10f64.to_radians());
        let t = Vector3::new(0.8, -0.4, 0.15);
        let src = structured_3d();
        let dst: Vec<[f64; 3]> = src
            .iter()
            .map(|p| {
                let q = rot * Vector3::from(*p) + t;
                [q.x, q.y, q.z]
            })
            .collect();
        let init = Se2Pose::new(0.7, -0.3, 9f64.to_radians());
        let p = refine_pose_3d(&cloud_from(&src), &cloud_from(&dst), &init, &Icp3Params::default()).unwrap();
        assert!(p.converged);
        // point-to-point matching stalls within about half the 0.25 m
        // sample spacing
        assert!((p.translation - t).norm() < 0.15, "{:?}", p.translation);
        assert!((p.rotation * rot.inverse()).angle().to_degrees() < 1.0);
    }

    #[test]
    fn refine_reduces_error_of_bad_yaw() {
        let src = structured_3d();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3);
        let dst: Vec<[f64; 3]> = src
            .iter()
            .map(|p| {
                let q = rot * Vector3::from(*p);
                [q.x, q.y, q.z]
            })
            .collect();
        let (sc, dc) = (cloud_from(&src), cloud_from(&dst));
        let init = Se2Pose::new(0.0, 0.0, 0.3 + 5f64.to_radians());
        let params = Icp3Params::default();
        let (r0, t0) = Pose3::from_se2(&init);
        let tree = KdTree::from_points(&cloud_coords(&dc));
        let before = gated_mse_3d(&voxel_representatives(&sc, params.voxel), &tree, &r0, &t0, params.mse_gate);
        let p = refine_pose_3d(&sc, &dc, &init, &params).unwrap();
        assert!(p.mse < before, "{} !< {before}", p.mse);
    }
}
