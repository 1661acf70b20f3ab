use fresco::config::Config;
use fresco::eval::{self, Label};
use fresco::index::{KeyframeIndex, MatchParams};
use fresco::synth::{generate, loop_sequence, perturb, LoopSpec, SceneSpec};
use fresco::{describe, DescriptorParams};
use proptest::prelude::*;
use rayon::prelude::*;

#[test]
fn synthetic_loop_reaches_unit_f1() {
    let seq = loop_sequence(&LoopSpec::default());
    let out = eval::run(&seq, &Config::default()).unwrap();
    let r = &out.report;
    assert!(r.keyframes >= 195);
    assert!(r.loop_eligible > 30);
    assert_eq!(r.max_f1, Some(1.0));
    assert!(!r.recall_undefined);
    let tp = out.labels.iter().filter(|l| **l == Label::TP).count();
    assert_eq!(tp, r.loop_eligible);
    assert!(r.runtime.stage1_ms.is_some());
    assert!(r.runtime.stage2_ms.is_some());
}

#[test]
fn stage2_off_leaves_phase_absent() {
    let seq = loop_sequence(&LoopSpec {
        frames: 120,
        width: 60.0,
        height: 30.0,
        ..LoopSpec::default()
    });
    let config = Config::default().with_overrides(&["stage2=false"]).unwrap();
    let out = eval::run(&seq, &config).unwrap();
    assert!(out.report.runtime.stage2_ms.is_none());
    assert!(out.poses.iter().all(|p| p.refined.is_none()));
}

#[test]
fn translated_scene_ranks_first_among_distractors() {
    let params = DescriptorParams::default();
    let mut index = KeyframeIndex::new(0);
    let distractors: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|k| describe(&generate(&SceneSpec::new(50_000 + k)), &params).unwrap())
        .collect();
    for (i, d) in distractors.into_iter().enumerate() {
        index.insert(i as u64, d).unwrap();
    }
    let open = MatchParams {
        tau_l1: f64::INFINITY,
        tau_r: 2.0,
        ..MatchParams::default()
    };
    let scenes: Vec<u64> = (0..10).collect();
    for (k, seed) in scenes.iter().enumerate() {
        let scene = generate(&SceneSpec::new(60_000 + seed));
        index.insert(100 + k as u64, describe(&scene, &params).unwrap()).unwrap();
    }
    for (k, seed) in scenes.iter().enumerate() {
        let scene = generate(&SceneSpec::new(60_000 + seed));
        let (tx, ty) = (10.0 - 2.0 * k as f64, -10.0 + 2.2 * k as f64);
        let q = describe(&perturb(&scene, tx, ty, 0.0, None), &params).unwrap();
        let m = index.match_query(&q, &open).unwrap().unwrap();
        assert_eq!(m.id, 100 + k as u64, "translation ({tx}, {ty})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perturb_round_trip(seed in 0u64..1000, tx in -20.0..20.0f64, ty in -20.0..20.0f64, yaw in -360.0..360.0f64) {
        let c = generate(&SceneSpec::new(seed));
        let (s, co) = yaw.to_radians().sin_cos();
        // inverse viewpoint: position -R(-yaw) t, heading -yaw
        let (ix, iy) = (-(co * tx + s * ty), -(-s * tx + co * ty));
        let back = perturb(&perturb(&c, tx, ty, yaw, None), ix, iy, -yaw, None);
        prop_assert_eq!(back.points.len(), c.points.len());
        for (a, b) in back.points.iter().zip(&c.points) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && a.z == b.z);
        }
    }

    #[test]
    fn same_seed_same_scene(seed in any::<u64>()) {
        prop_assert_eq!(generate(&SceneSpec::new(seed)), generate(&SceneSpec::new(seed)));
    }
}
