//! Built-in property suite run by `fresco selftest`.
//!
//! Every property uses fixed seeds, so two runs print the same lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::BevImage;
use crate::descriptor::{best_shift_l1, circular_shift};
use crate::index::make_key;
use crate::kdtree::{squared_distance, KdTree};
use crate::pose::{self, CompactParams, NicpParams};
use crate::spectrum::{fbev, FrescoDescriptor};
use crate::synth::{generate, perturb, SceneSpec};
use crate::{describe, DescriptorParams};

/// Column shift used by the shift-consistency property.
pub type ShiftFn = fn(&FrescoDescriptor, i64) -> FrescoDescriptor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{status} {} ({})", self.name, self.detail)
    }
}

fn result(name: &'static str, ok: usize, total: usize, needed: usize) -> PropertyResult {
    PropertyResult {
        name,
        passed: ok >= needed,
        detail: format!("{ok}/{total}"),
    }
}

fn random_bev(rng: &mut ChaCha8Rng, bins: usize) -> BevImage {
    let data = (0..bins * bins)
        .map(|_| if rng.gen_bool(0.1) { rng.gen_range(0.0..10.0) } else { 0.0 })
        .collect();
    BevImage::from_data(80.0, bins, data).expect("valid image")
}

fn translation_invariance() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bins = 32;
    let trials = 20;
    let mut ok = 0;
    for _ in 0..trials {
        let img = random_bev(&mut rng, bins);
        let (dx, dy) = (rng.gen_range(0..bins), rng.gen_range(0..bins));
        let mut shifted = vec![0.0; bins * bins];
        for i in 0..bins {
            for j in 0..bins {
                shifted[((i + dx) % bins) * bins + (j + dy) % bins] = img.get(i, j);
            }
        }
        let a = fbev(&img);
        let b = fbev(&BevImage::from_data(80.0, bins, shifted).unwrap());
        let worst = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(1e-12))
            .fold(0.0, f64::max);
        ok += usize::from(worst < 1e-9);
    }
    result("fbev translation invariance", ok, trials, trials)
}

fn shift_consistency(shift: ShiftFn) -> PropertyResult {
    let params = DescriptorParams::default();
    let half = params.sectors as i64 / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let trials = 10;
    let mut ok = 0;
    for t in 0..trials {
        let d = describe(&generate(&SceneSpec::new(100 + t)), &params).expect("scene has structure");
        let k = rng.gen_range(0..params.sectors as i64);
        let (found, _) = best_shift_l1(&shift(&d, k), &d).expect("same dimensions");
        ok += usize::from(found as i64 == k.rem_euclid(half));
    }
    result("shift consistency", ok, trials as usize, trials as usize)
}

fn half_period() -> PropertyResult {
    let params = DescriptorParams::default();
    let trials = 5;
    let mut ok = 0;
    for t in 0..trials {
        let d = describe(&generate(&SceneSpec::new(200 + t)), &params).expect("scene has structure");
        let h = circular_shift(&d, params.sectors as i64 / 2);
        let worst = d.data().iter().zip(h.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        ok += usize::from(worst < 1e-4);
    }
    result("descriptor half-period symmetry", ok, trials as usize, trials as usize)
}

fn rotation_recovery() -> PropertyResult {
    let params = DescriptorParams::default();
    let step = 360.0 / params.sectors as f64;
    let half = params.sectors / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 20;
    let mut ok = 0;
    for t in 0..trials {
        let scene = generate(&SceneSpec::new(300 + t));
        let yaw = rng.gen_range(0.0..360.0);
        let a = describe(&scene, &params).expect("scene has structure");
        let b = describe(&perturb(&scene, 0.0, 0.0, yaw, None), &params).expect("scene has structure");
        let (found, _) = best_shift_l1(&b, &a).expect("same dimensions");
        // a viewpoint yaw turns the scene by -yaw
        let expected = (-yaw / step).rem_euclid(half as f64);
        let err = (found as f64 - expected).abs();
        ok += usize::from(err.min(half as f64 - err) <= 1.0);
    }
    result("rotation recovery", ok, trials as usize, trials as usize * 9 / 10)
}

fn key_invariance() -> PropertyResult {
    let params = DescriptorParams::default();
    let d = describe(&generate(&SceneSpec::new(400)), &params).expect("scene has structure");
    let key = make_key(&d).expect("non-degenerate");
    let trials = 10;
    let ok = (0..trials)
        .filter(|&k| {
            let other = make_key(&circular_shift(&d, k * 7)).expect("non-degenerate");
            key.as_slice().iter().zip(other.as_slice()).all(|(a, b)| (a - b).abs() < 1e-9)
        })
        .count();
    result("key rotation invariance", ok, trials as usize, trials as usize)
}

fn retrieval_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<[f64; 4]> = (0..300).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
    let tree = KdTree::from_points(&points);
    let trials = 30;
    let mut ok = 0;
    for _ in 0..trials {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let mut linear: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (squared_distance(p, &q), i)).collect();
        linear.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let found: Vec<usize> = tree.knn(&q, 10).iter().map(|n| n.index).collect();
        let expected: Vec<usize> = linear[..10].iter().map(|x| x.1).collect();
        ok += usize::from(found == expected);
    }
    result("k-d retrieval equals linear scan", ok, trials, trials)
}

fn nicp_round_trip() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let compact = CompactParams::default();
    let nicp = NicpParams::default();
    let trials = 10;
    let mut ok = 0;
    for t in 0..trials {
        let spec = SceneSpec {
            range: 60.0,
            ..SceneSpec::new(600 + t)
        };
        let cand = generate(&spec);
        let (tx, ty, yaw) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-180.0..180.0));
        let query = perturb(&cand, tx, ty, yaw, None);
        let (Ok(q), Ok(c)) = (pose::extract_compact_2d(&query, &compact), pose::extract_compact_2d(&cand, &compact)) else {
            continue;
        };
        // the descriptor reports the scene turn, -yaw, up to 180 degrees
        let rotation = (-yaw).rem_euclid(180.0);
        let Ok(est) = pose::stage1_compact(&q, &c, rotation, &nicp) else {
            continue;
        };
        let p = est.pose;
        let yaw_err = pose::normalize_angle(p.yaw - yaw.to_radians()).abs().to_degrees();
        ok += usize::from((p.tx - tx).hypot(p.ty - ty) <= 0.1 && yaw_err <= 1.0);
    }
    result("nicp round trip", ok, trials as usize, trials as usize * 9 / 10)
}

/// Runs every property with the given shift implementation.
pub fn run_with(shift: ShiftFn) -> Vec<PropertyResult> {
    vec![
        translation_invariance(),
        shift_consistency(shift),
        half_period(),
        rotation_recovery(),
        key_invariance(),
        retrieval_oracle(),
        nicp_round_trip(),
    ]
}

pub fn run() -> Vec<PropertyResult> {
    run_with(circular_shift)
}
