use occuvt_core::fusion::init::{routing_fusion, seeded_fusion, seeded_weights, DEFAULT_DILATIONS};
use occuvt_core::fusion::layers::Linear;
use occuvt_core::fusion::pipeline::class_logits;
use occuvt_core::fusion::{broadcast_z, fuse, gate, refine_local, run_pipeline, LevelInput, WindowAttention};
use occuvt_core::grid::{default_pyramid, GridSpec, LevelConfig, PyramidConfig, Sampling};
use occuvt_core::{Aggregation, BevFeature, CsrMatrix, FeatureMaps, ProjectionSet, Volume, NUM_CLASSES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gate_stays_in_open_unit_interval(seed in any::<u64>(), c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = seeded_fusion(c, 1, 3, &[1], seed);
        for v in w.ffn_in.weight.iter_mut().chain(w.ffn_out.weight.iter_mut()) {
            *v *= 50.0;
        }
        let local = Volume::new(c, [3, 2, 2], random_vec(&mut rng, c * 12, 5.0)).unwrap();
        let refined = refine_local(&local, &w).unwrap();
        for g in gate(&refined, &w) {
            prop_assert!((0.0..=1.0).contains(&g) && g.is_finite());
        }
        let global = BevFeature::new(c, [3, 2], random_vec(&mut rng, c * 6, 5.0)).unwrap();
        prop_assert!(fuse(&local, &global, &w).unwrap().is_finite());
    }

    #[test]
    fn attention_rows_are_convex(seed in any::<u64>(), heads in prop::sample::select(vec![1usize, 2, 4])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 4;
        let mut att = WindowAttention::zeros(c, heads, 3);
        for l in [&mut att.query, &mut att.key, &mut att.value, &mut att.output] {
            l.weight = random_vec(&mut rng, c * c, 2.0);
        }
        let x = BevFeature::new(c, [4, 5], random_vec(&mut rng, c * 20, 3.0)).unwrap();
        for window in att.probabilities(&x).unwrap() {
            prop_assert_eq!(window.len(), heads);
            for probs in window {
                prop_assert_eq!(probs.len(), 81);
                for row in probs.chunks(9) {
                    prop_assert!(row.iter().all(|&p| p >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn fuse_is_linear_in_global_under_fixed_gate(seed in any::<u64>(), bias in -3.0f32..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 4;
        let mut w = seeded_fusion(c, 2, 5, &DEFAULT_DILATIONS, seed);
        // the gate depends only on the FFN bias now
        w.ffn_out.weight.iter_mut().for_each(|v| *v = 0.0);
        w.ffn_out.bias.iter_mut().for_each(|v| *v = bias);
        // keep the global branch linear
        w.attention = WindowAttention::zeros(c, 2, 5);
        let local = Volume::new(c, [4, 3, 2], random_vec(&mut rng, c * 24, 1.0)).unwrap();
        let g1 = BevFeature::new(c, [4, 3], random_vec(&mut rng, c * 12, 1.0)).unwrap();
        let g2 = BevFeature::new(c, [4, 3], g1.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let base = refine_local(&local, &w).unwrap();
        let o1 = fuse(&local, &g1, &w).unwrap();
        let o2 = fuse(&local, &g2, &w).unwrap();
        for ((a, b), l) in o1.data().iter().zip(o2.data()).zip(base.data()) {
            let (d1, d2) = ((a - l) as f64, (b - l) as f64);
            prop_assert!((d2 - 2.0 * d1).abs() <= 1e-5 * (1.0 + d1.abs()));
        }
    }

    #[test]
    fn zero_global_returns_refined_local(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = seeded_fusion(4, 4, 5, &DEFAULT_DILATIONS, seed);
        let local = Volume::new(4, [5, 5, 3], random_vec(&mut rng, 4 * 75, 1.0)).unwrap();
        let out = fuse(&local, &BevFeature::zeros(4, [5, 5]), &w).unwrap();
        prop_assert_eq!(out, refine_local(&local, &w).unwrap());
    }

    #[test]
    fn broadcast_slices_match(seed in any::<u64>(), z in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bev = BevFeature::new(2, [3, 4], random_vec(&mut rng, 24, 1.0)).unwrap();
        let v = broadcast_z(&bev, z);
        for c in 0..2 {
            for x in 0..3 {
                for y in 0..4 {
                    for iz in 0..z {
                        prop_assert_eq!(v.get(c, x, y, iz), bev.get(c, x, y));
                    }
                }
            }
        }
    }
}

#[test]
fn gate_saturates() {
    let local = Volume::new(1, [1, 1, 1], vec![2.0]).unwrap();
    let global = BevFeature::new(1, [1, 1], vec![3.0]).unwrap();
    let open = fuse(&local, &global, &routing_fusion(1, 1e4)).unwrap();
    assert!((open.data()[0] - 5.0).abs() < 1e-6);
    let shut = fuse(&local, &global, &routing_fusion(1, -1e4)).unwrap();
    assert!((shut.data()[0] - 2.0).abs() < 1e-6);
}

fn single_level(dims: [usize; 3], c: usize) -> PyramidConfig {
    let grid = GridSpec::new((-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0), dims).unwrap();
    PyramidConfig::new(vec![LevelConfig {
        level: 0,
        grid,
        sampling: Some(Sampling { subdivision: 1, feature_scale: 1.0 }),
        channels: c,
    }])
    .unwrap()
}

fn random_projections(rng: &mut ChaCha8Rng, level: LevelConfig, rows: usize) -> ProjectionSet {
    let g = level.grid;
    let mut trip = |cols: usize| {
        let t: Vec<_> = (0..3 * cols)
            .map(|_| (rng.random_range(0..rows), rng.random_range(0..cols), rng.random_range(0.0f32..1.0)))
            .collect();
        CsrMatrix::from_triplets(rows, cols, &t).unwrap()
    };
    let local = trip(g.num_voxels());
    let global = trip(g.num_cells());
    ProjectionSet { local, global, level, aggregation: Aggregation::Sum }
}

#[test]
fn single_level_pipeline_is_fuse_of_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = 4;
    let pyramid = single_level([5, 5, 3], c);
    let weights = seeded_weights(&pyramid, 5, 3);
    let feats = FeatureMaps::new(2, 3, 4, c, random_vec(&mut rng, c * 24, 1.0)).unwrap();
    let proj = random_projections(&mut rng, pyramid.levels[0], 24);
    let out = run_pipeline(&[Some(LevelInput { features: &feats, projections: &proj })], &weights, &pyramid).unwrap();
    let (local, global) = proj.transform(&feats).unwrap();
    let fused = fuse(&local, &global, weights.levels[0].fusion.as_ref().unwrap()).unwrap();
    assert_eq!(out.volumes[0], fused);
    assert_eq!(out.logits[0], class_logits(&fused, &weights.levels[0].head).unwrap());
}

#[test]
fn zero_features_give_bias_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = 4;
    let pyramid = single_level([5, 5, 2], c);
    let mut weights = seeded_weights(&pyramid, 3, 9);
    weights.levels[0].head = Linear { bias: vec![0.5, -1.0, 2.0], ..Linear::identity(c, 3) };
    let feats = FeatureMaps::zeros(1, 4, 4, c);
    let proj = random_projections(&mut rng, pyramid.levels[0], 16);
    let out = run_pipeline(&[Some(LevelInput { features: &feats, projections: &proj })], &weights, &pyramid).unwrap();
    let logits = &out.logits[0];
    for k in 0..3 {
        assert!(logits.channel(k).iter().all(|&v| v == [0.5, -1.0, 2.0][k]));
    }
}

#[test]
fn default_pyramid_output_shape() {
    let pyramid = default_pyramid();
    let c = pyramid.channels();
    let weights = seeded_weights(&pyramid, NUM_CLASSES, 1);
    // six cameras of 1600×900 scaled per level; zero matrices keep this cheap
    let sizes = [(0, 0), (200, 112), (100, 56), (50, 28)];
    let feats: Vec<FeatureMaps> = sizes[1..].iter().map(|&(w, h)| FeatureMaps::zeros(6, h, w, c)).collect();
    let projs: Vec<ProjectionSet> = pyramid.levels[1..]
        .iter()
        .zip(&sizes[1..])
        .map(|(l, &(w, h))| ProjectionSet {
            local: CsrMatrix::zeros(6 * w * h, l.grid.num_voxels()).unwrap(),
            global: CsrMatrix::zeros(6 * w * h, l.grid.num_cells()).unwrap(),
            level: *l,
            aggregation: Aggregation::Mean,
        })
        .collect();
    let mut inputs = vec![None];
    inputs.extend(feats.iter().zip(&projs).map(|(f, p)| Some(LevelInput { features: f, projections: p })));
    let out = run_pipeline(&inputs, &weights, &pyramid).unwrap();
    assert_eq!(out.logits.len(), 4);
    assert_eq!(out.logits[0].channels(), NUM_CLASSES);
    assert_eq!(out.logits[0].dims(), [200, 200, 16]);
    assert_eq!(out.logits[3].dims(), [25, 25, 2]);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let pyramid = single_level([2, 2, 2], 2);
    let weights = seeded_weights(&pyramid, 3, 0);
    assert!(run_pipeline(&[None], &weights, &pyramid).is_err());
    assert!(run_pipeline(&[], &weights, &pyramid).is_err());
}
