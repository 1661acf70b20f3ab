//! Loop-closure evaluation: keyframe sampling, ground-truth labelling,
//! precision/recall sweeps, pose accuracy and per-phase runtime.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::dataset::FrameSource;
use crate::error::{Error, Result};
use crate::index::{KeyframeIndex, MatchResult};
use crate::pointcloud::{self, PointCloud};
use crate::pose::{self, normalize_angle, Branch, Compact2dCloud, Se2Pose, Stage1Pose};
use crate::spectrum::FrescoDescriptor;

/// Sensor pose in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthPose {
    pub id: u64,
    pub position: [f64; 3],
    pub rotation: Matrix3<f64>,
}

impl GroundTruthPose {
    pub fn planar(id: u64, x: f64, y: f64, yaw: f64) -> Self {
        Self {
            id,
            position: [x, y, 0.0],
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
        }
    }

    pub fn from_xyz_yaw(id: u64, x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let mut p = Self::planar(id, x, y, yaw);
        p.position[2] = z;
        p
    }

    /// From a row-major 3x4 `[R | t]` matrix.
    pub fn from_3x4(id: u64, m: &[f64; 12]) -> Self {
        Self {
            id,
            position: [m[3], m[7], m[11]],
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
        }
    }

    /// Right-multiplies by a rigid transform given as a 3x4 matrix, e.g. a
    /// sensor-to-body calibration.
    pub fn compose(&self, m: &[f64; 12]) -> Self {
        let r2 = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t2 = Vector3::new(m[3], m[7], m[11]);
        let t = self.rotation * t2 + Vector3::from(self.position);
        Self {
            id: self.id,
            position: [t.x, t.y, t.z],
            rotation: self.rotation * r2,
        }
    }

    pub fn distance(&self, other: &GroundTruthPose) -> f64 {
        let d = Vector3::from(self.position) - Vector3::from(other.position);
        d.norm()
    }

    /// Transform taking points in this sensor frame into `other`'s frame.
    pub fn relative_to(&self, other: &GroundTruthPose) -> (Matrix3<f64>, Vector3<f64>) {
        let rt = other.rotation.transpose();
        (
            rt * self.rotation,
            rt * (Vector3::from(self.position) - Vector3::from(other.position)),
        )
    }

    /// Planar part of [`relative_to`](Self::relative_to): `(tx, ty, yaw)`.
    pub fn relative_planar(&self, other: &GroundTruthPose) -> (f64, f64, f64) {
        let (r, t) = self.relative_to(other);
        (t.x, t.y, r[(1, 0)].atan2(r[(0, 0)]))
    }
}

/// Greedy spacing: the first pose is kept, then every pose at least
/// `spacing` meters from the last kept one.
pub fn sample_keyframes(poses: &[GroundTruthPose], spacing: f64) -> Vec<u64> {
    let mut kept: Vec<&GroundTruthPose> = Vec::new();
    for p in poses {
        match kept.last() {
            Some(last) if p.distance(last) < spacing => {}
            _ => kept.push(p),
        }
    }
    kept.into_iter().map(|p| p.id).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    TP,
    FP,
    FN,
    TN,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::TP => "TP",
            Label::FP => "FP",
            Label::FN => "FN",
            Label::TN => "TN",
        }
    }
}

/// Keyframe poses in processing order, for labelling.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    poses: Vec<GroundTruthPose>,
    position: HashMap<u64, usize>,
    pub radius: f64,
    pub horizon: usize,
}

impl GroundTruth {
    pub fn new(poses: Vec<GroundTruthPose>, radius: f64, horizon: usize) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::param("tp_radius", "must be positive"));
        }
        if poses.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::param("poses", "frame ids must be strictly increasing"));
        }
        let position = poses.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        Ok(Self {
            poses,
            position,
            radius,
            horizon,
        })
    }

    pub fn pose(&self, id: u64) -> Result<&GroundTruthPose> {
        self.position.get(&id).map(|&i| &self.poses[i]).ok_or(Error::UnknownId(id))
    }

    pub fn poses(&self) -> &[GroundTruthPose] {
        &self.poses
    }

    /// Whether some keyframe older than the exclusion horizon lies within the
    /// radius of `query`.
    pub fn has_positive(&self, query: u64) -> Result<bool> {
        let k = *self.position.get(&query).ok_or(Error::UnknownId(query))?;
        let q = &self.poses[k];
        let end = k.saturating_sub(self.horizon);
        Ok(self.poses[..end].iter().any(|p| p.distance(q) <= self.radius))
    }

    pub fn label(&self, query: u64, matched: Option<u64>) -> Result<Label> {
        match matched {
            Some(m) => {
                let d = self.pose(query)?.distance(self.pose(m)?);
                Ok(if d <= self.radius { Label::TP } else { Label::FP })
            }
            None => Ok(if self.has_positive(query)? { Label::FN } else { Label::TN }),
        }
    }
}

/// Best candidate found for one query keyframe, accepted or not.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query: u64,
    pub best: Option<MatchResult>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, l: Label) {
        match l {
            Label::TP => self.tp += 1,
            Label::FP => self.fp += 1,
            Label::FN => self.fn_ += 1,
            Label::TN => self.tn += 1,
        }
    }

    /// 1 when nothing is accepted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    /// `None` when no query has an eligible positive.
    pub recall: Option<f64>,
    pub f1: f64,
    pub confusion: Confusion,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrReport {
    pub curve: Vec<PrPoint>,
    /// Index into `curve` of the maximum F1; smallest threshold on ties.
    pub best: Option<usize>,
    pub queries: usize,
    /// Queries with a keyframe within the radius outside the horizon.
    pub loop_eligible: usize,
    /// Set when no query has an eligible positive; recall is undefined.
    pub degenerate: bool,
}

impl PrReport {
    pub fn best_point(&self) -> Option<&PrPoint> {
        self.best.map(|i| &self.curve[i])
    }
}

/// Labels every outcome with `d_l1 <= threshold` (and `d_r <= tau_r`) as
/// accepted.
pub fn confusion_at(outcomes: &[QueryOutcome], gt: &GroundTruth, threshold: f64, tau_r: f64) -> Result<Confusion> {
    let mut c = Confusion::default();
    for o in outcomes {
        let matched = o.best.filter(|m| m.accepted_at(threshold, tau_r)).map(|m| m.id);
        c.add(gt.label(o.query, matched)?);
    }
    Ok(c)
}

/// Sweeps the `d_l1` acceptance threshold over every observed value.
pub fn pr_sweep(outcomes: &[QueryOutcome], gt: &GroundTruth, tau_r: f64) -> Result<PrReport> {
    let mut thresholds: Vec<f64> = outcomes.iter().filter_map(|o| o.best.map(|m| m.d_l1)).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut loop_eligible = 0;
    for o in outcomes {
        if gt.has_positive(o.query)? {
            loop_eligible += 1;
        }
    }

    let curve = thresholds
        .par_iter()
        .map(|&t| {
            let confusion = confusion_at(outcomes, gt, t, tau_r)?;
            let precision = confusion.precision();
            let recall = confusion.recall();
            Ok(PrPoint {
                threshold: t,
                precision,
                recall,
                f1: recall.map_or(0.0, |r| f1(precision, r)),
                confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let degenerate = curve.iter().all(|p| p.recall.is_none());
    let best = if degenerate {
        None
    } else {
        curve
            .iter()
            .enumerate()
            .reduce(|a, b| if b.1.f1 > a.1.f1 { b } else { a })
            .map(|(i, _)| i)
    };
    Ok(PrReport {
        curve,
        best,
        queries: outcomes.len(),
        loop_eligible,
        degenerate,
    })
}

/// One accepted true positive with its estimated pose and ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub estimate: Se2Pose,
    /// Ground-truth `(tx, ty, yaw)`, query to candidate.
    pub truth: (f64, f64, f64),
    /// 3D alignment MSE at the final pose.
    pub mse_3d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoseStats {
    pub count: usize,
    pub rte_mean: f64,
    pub rte_std: f64,
    pub rre_mean_deg: f64,
    pub rre_std_deg: f64,
    pub success_rate: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Relative translation/rotation errors and the success rate (3D MSE below
/// `success_mse`). `None` for an empty sample set.
pub fn pose_metrics(samples: &[PoseSample], success_mse: f64) -> Option<PoseStats> {
    if samples.is_empty() {
        return None;
    }
    let rte: Vec<f64> = samples
        .iter()
        .map(|s| (s.estimate.tx - s.truth.0).hypot(s.estimate.ty - s.truth.1))
        .collect();
    let rre: Vec<f64> = samples
        .iter()
        .map(|s| normalize_angle(s.estimate.yaw - s.truth.2).abs().to_degrees())
        .collect();
    let ok = samples.iter().filter(|s| s.mse_3d < success_mse).count();
    let (rte_mean, rte_std) = mean_std(&rte);
    let (rre_mean_deg, rre_std_deg) = mean_std(&rre);
    Some(PoseStats {
        count: samples.len(),
        rte_mean,
        rte_std,
        rre_mean_deg,
        rre_std_deg,
        success_rate: ok as f64 / samples.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Descriptor,
    Retrieval,
    Stage1,
    Stage2,
}

/// Wall-clock samples per pipeline phase.
#[derive(Clone, Debug, Default)]
pub struct PhaseTimer {
    samples: HashMap<Phase, Vec<Duration>>,
}

impl PhaseTimer {
    pub fn record(&mut self, phase: Phase, d: Duration) {
        self.samples.entry(phase).or_default().push(d);
    }

    pub fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(phase, start.elapsed());
        out
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.samples.get(&phase).map_or(0, Vec::len)
    }

    fn mean_ms(&self, phase: Phase) -> Option<f64> {
        let s = self.samples.get(&phase).filter(|s| !s.is_empty())?;
        Some(s.iter().map(|d| d.as_secs_f64() * 1e3).sum::<f64>() / s.len() as f64)
    }

    /// Phases that never ran are reported as `None`, not zero.
    pub fn report(&self) -> RuntimeReport {
        RuntimeReport {
            descriptor_ms: self.mean_ms(Phase::Descriptor),
            retrieval_ms: self.mean_ms(Phase::Retrieval),
            stage1_ms: self.mean_ms(Phase::Stage1),
            stage2_ms: self.mean_ms(Phase::Stage2),
            frames: self.count(Phase::Descriptor),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RuntimeReport {
    pub descriptor_ms: Option<f64>,
    pub retrieval_ms: Option<f64>,
    pub stage1_ms: Option<f64>,
    pub stage2_ms: Option<f64>,
    pub frames: usize,
}

/// Summary written to `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub keyframes: usize,
    pub degenerate_frames: Vec<u64>,
    pub loop_eligible: usize,
    pub threshold_l1: Option<f64>,
    pub tau_r: f64,
    pub max_f1: Option<f64>,
    pub precision: Option<f64>,
    /// TP / (TP + FN): queries that had an eligible positive.
    pub recall: Option<f64>,
    /// TP / all queries.
    pub recall_all_queries: Option<f64>,
    pub recall_undefined: bool,
    pub pose: Option<PoseStats>,
    /// Stage-one pose metrics restricted to poses that pass the optional
    /// MSE gate, when one is configured.
    pub pose_gated: Option<PoseStats>,
    pub runtime: RuntimeReport,
    pub pr_curve: Vec<PrPoint>,
}

/// Pose estimate for one accepted match.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoseRecord {
    pub query: u64,
    pub matched: u64,
    pub stage1: Stage1Pose,
    pub refined: Option<Se2Pose>,
    pub mse_3d: f64,
    pub label: Label,
}

impl PoseRecord {
    pub fn final_pose(&self) -> Se2Pose {
        self.refined.unwrap_or(self.stage1.pose)
    }
}

/// All artifacts of an evaluation run.
#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub outcomes: Vec<QueryOutcome>,
    pub labels: Vec<Label>,
    pub poses: Vec<PoseRecord>,
    pub ground_truth: GroundTruth,
}

struct Prepared {
    id: u64,
    descriptor: Result<FrescoDescriptor>,
    compact: Option<Compact2dCloud>,
    elapsed: Duration,
}

fn prepare(source: &dyn FrameSource, id: u64, config: &Config) -> Result<Prepared> {
    let cloud = source.load(id)?;
    let start = Instant::now();
    let params = config.descriptor_params();
    let cleaned = pointcloud::preprocess(&cloud, params.window, &params.ground);
    let descriptor = crate::describe_preprocessed(&cleaned, &params);
    let elapsed = start.elapsed();
    let compact = pose::extract_compact_2d(&cleaned, &config.compact_params()).ok();
    Ok(Prepared {
        id,
        descriptor,
        compact,
        elapsed,
    })
}

/// Runs the whole protocol over a posed frame source.
pub fn run(source: &dyn FrameSource, config: &Config) -> Result<EvalOutput> {
    let poses = source
        .poses()
        .ok_or_else(|| Error::param("poses", "evaluation needs ground-truth poses"))?;
    let keyframes = sample_keyframes(poses, config.keyframe_spacing);
    let by_id: HashMap<u64, &GroundTruthPose> = poses.iter().map(|p| (p.id, p)).collect();
    let kf_poses: Vec<GroundTruthPose> = keyframes.iter().map(|id| by_id[id].clone()).collect();
    let gt = GroundTruth::new(kf_poses, config.tp_radius, config.exclusion_horizon)?;

    let match_params = config.match_params();
    let mut timer = PhaseTimer::default();
    let mut index = KeyframeIndex::new(config.exclusion_horizon);
    let mut outcomes = Vec::with_capacity(keyframes.len());
    let mut compact: HashMap<u64, Compact2dCloud> = HashMap::new();
    let mut degenerate = Vec::new();

    // descriptors are computed a chunk ahead in parallel; insertion stays in
    // dataset order
    for chunk in keyframes.chunks(64) {
        let prepared = chunk
            .par_iter()
            .map(|&id| prepare(source, id, config))
            .collect::<Result<Vec<_>>>()?;
        for p in prepared {
            timer.record(Phase::Descriptor, p.elapsed);
            if let Some(c) = p.compact {
                compact.insert(p.id, c);
            }
            let d = p.descriptor?;
            let start = Instant::now();
            let best = match index.match_query(&d, &match_params) {
                Ok(b) => b,
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            timer.record(Phase::Retrieval, start.elapsed());
            outcomes.push(QueryOutcome { query: p.id, best });
            match index.insert(p.id, d) {
                Ok(()) => {}
                Err(Error::Degenerate(_)) => degenerate.push(p.id),
                Err(e) => return Err(e),
            }
        }
    }

    let pr = pr_sweep(&outcomes, &gt, match_params.tau_r)?;
    let best = pr.best_point().cloned();
    let threshold = best.as_ref().map(|b| b.threshold);

    let mut labels = Vec::with_capacity(outcomes.len());
    let mut accepted = Vec::new();
    for o in &outcomes {
        let matched = threshold.and_then(|t| o.best.filter(|m| m.accepted_at(t, match_params.tau_r)));
        let label = gt.label(o.query, matched.map(|m| m.id))?;
        labels.push(label);
        if let Some(m) = matched {
            accepted.push((o.query, m, label));
        }
    }

    let icp = config.icp3_params();
    let nicp = config.nicp_params();
    let mut pose_records = Vec::new();
    for (query, m, label) in accepted {
        let (Some(qc), Some(cc)) = (compact.get(&query), compact.get(&m.id)) else {
            continue;
        };
        let start = Instant::now();
        let Ok(stage1) = pose::stage1_compact(qc, cc, m.rotation_deg, &nicp) else {
            continue;
        };
        timer.record(Phase::Stage1, start.elapsed());

        let params = config.descriptor_params();
        let load = |id| -> Result<PointCloud> {
            Ok(pointcloud::preprocess(&source.load(id)?, params.window, &params.ground))
        };
        let (qcloud, ccloud) = (load(query)?, load(m.id)?);
        let refined = if config.stage2 {
            let start = Instant::now();
            let r = pose::refine_pose_3d(&qcloud, &ccloud, &stage1.pose, &icp).ok();
            timer.record(Phase::Stage2, start.elapsed());
            r
        } else {
            None
        };
        let mse_3d = match &refined {
            Some(r) => r.mse,
            None => pose::alignment_mse_3d(&qcloud, &ccloud, &stage1.pose, &icp),
        };
        pose_records.push(PoseRecord {
            query,
            matched: m.id,
            stage1,
            refined: refined.map(|r| r.to_se2()),
            mse_3d,
            label,
        });
    }

    let sample = |r: &PoseRecord| -> Result<PoseSample> {
        Ok(PoseSample {
            estimate: r.final_pose(),
            truth: gt.pose(r.query)?.relative_planar(gt.pose(r.matched)?),
            mse_3d: r.mse_3d,
        })
    };
    let tp: Vec<&PoseRecord> = pose_records.iter().filter(|r| r.label == Label::TP).collect();
    let samples = tp.iter().map(|r| sample(r)).collect::<Result<Vec<_>>>()?;
    let gated = match config.stage1_mse_gate {
        Some(g) => tp
            .iter()
            .filter(|r| r.stage1.pose.mse <= g)
            .map(|r| sample(r))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let report = EvalReport {
        keyframes: keyframes.len(),
        degenerate_frames: degenerate,
        loop_eligible: pr.loop_eligible,
        threshold_l1: threshold,
        tau_r: match_params.tau_r,
        max_f1: best.as_ref().map(|b| b.f1),
        precision: best.as_ref().map(|b| b.precision),
        recall: best.as_ref().and_then(|b| b.recall),
        recall_all_queries: best
            .as_ref()
            .map(|b| b.confusion.tp as f64 / outcomes.len().max(1) as f64),
        recall_undefined: pr.degenerate,
        pose: pose_metrics(&samples, icp.success_mse),
        pose_gated: pose_metrics(&gated, icp.success_mse),
        runtime: timer.report(),
        pr_curve: pr.curve,
    };
    Ok(EvalOutput {
        report,
        outcomes,
        labels,
        poses: pose_records,
        ground_truth: gt,
    })
}

pub fn pr_curve_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold,precision,recall,f1\n");
    for p in &report.pr_curve {
        let recall = p.recall.map_or(String::from("nan"), |r| r.to_string());
        let _ = writeln!(s, "{},{},{},{}", p.threshold, p.precision, recall, p.f1);
    }
    s
}

pub fn matches_csv(out: &EvalOutput) -> String {
    let mut s = String::from("query,match,d_l1,d_r,shift,label\n");
    for (o, l) in out.outcomes.iter().zip(&out.labels) {
        match o.best {
            Some(m) => {
                let _ = writeln!(s, "{},{},{},{},{},{}", o.query, m.id, m.d_l1, m.d_r, m.best_shift, l.as_str());
            }
            None => {
                let _ = writeln!(s, "{},,,,,{}", o.query, l.as_str());
            }
        }
    }
    s
}

pub const POSE_CSV_HEADER: &str = "query,match,tx,ty,yaw,mse,branch,converged";

/// One pose-record row: `query,match,tx,ty,yaw,mse,branch,converged`.
pub fn pose_csv_row(query: u64, matched: u64, s1: &Stage1Pose) -> String {
    let branch = match s1.branch {
        Branch::Direct => "direct",
        Branch::Flipped => "flipped",
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        query, matched, s1.pose.tx, s1.pose.ty, s1.pose.yaw, s1.pose.mse, branch, s1.pose.converged
    )
}

pub fn poses_csv(out: &EvalOutput) -> String {
    let mut s = format!("{POSE_CSV_HEADER}\n");
    for r in &out.poses {
        let _ = writeln!(s, "{}", pose_csv_row(r.query, r.matched, &r.stage1));
    }
    s
}

/// Top-down trajectory: black path, green true-positive and red
/// false-positive match segments.
pub fn trajectory_svg(out: &EvalOutput) -> String {
    let poses = out.ground_truth.poses();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poses {
        for k in 0..2 {
            lo[k] = lo[k].min(p.position[k]);
            hi[k] = hi[k].max(p.position[k]);
        }
    }
    if poses.is_empty() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let margin = 10.0;
    let (w, h) = (hi[0] - lo[0] + 2.0 * margin, hi[1] - lo[1] + 2.0 * margin);
    let x = |v: f64| v - lo[0] + margin;
    let y = |v: f64| hi[1] - v + margin;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.1} {h:.1}\" width=\"{:.0}\" height=\"{:.0}\">\n",
        w * 4.0,
        h * 4.0
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<polyline fill=\"none\" stroke=\"black\" stroke-width=\"0.6\" points=\"");
    for p in poses {
        let _ = write!(s, "{:.2},{:.2} ", x(p.position[0]), y(p.position[1]));
    }
    s.push_str("\"/>\n");
    for (o, l) in out.outcomes.iter().zip(&out.labels) {
        let colour = match l {
            Label::TP => "green",
            Label::FP => "red",
            _ => continue,
        };
        let (Some(m), Ok(q)) = (o.best, out.ground_truth.pose(o.query)) else {
            continue;
        };
        let Ok(c) = out.ground_truth.pose(m.id) else {
            continue;
        };
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{colour}\" stroke-width=\"0.8\"/>",
            x(q.position[0]),
            y(q.position[1]),
            x(c.position[0]),
            y(c.position[1])
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `pr_curve.csv`, `matches.csv`, `poses.csv`, `report.json` and,
/// when asked, `trajectory.svg`.
pub fn write_outputs(out: &EvalOutput, dir: &Path, svg: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("pr_curve.csv", pr_curve_csv(&out.report))?;
    write("matches.csv", matches_csv(out))?;
    write("poses.csv", poses_csv(out))?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    write("report.json", json)?;
    if svg {
        write("trajectory.svg", trajectory_svg(out))?;
    }
    Ok(())
}
