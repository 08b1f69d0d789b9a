//! One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

mod common;

use std::time::Instant;

use common::*;
use occuvt::config::{rig_to_entries, GridJson};
use occuvt::formats::{read_bytes, read_json, read_tensor, write_json};
use occuvt::synth::surround_rig;
use occuvt_core::eval::{confusion, focal_loss, iou, lovasz_softmax, miou, scal_loss, LabelVolume, ScalKind};
use occuvt_core::fusion::init::{routing_fusion, seeded_fusion, DEFAULT_DILATIONS};
use occuvt_core::fusion::{fuse, refine_local};
use occuvt_core::grid::{default_pyramid, LevelConfig, Sampling};
use occuvt_core::projector::{
    build_global_matrix, build_local_matrix, oracle_transform, oracle_transform_global, transform_global,
    transform_local,
};
use occuvt_core::sparse::{spmm, DenseMatrix};
use occuvt_core::{Aggregation, BevFeature, HitRule, Volume, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    for seed in 0..50u64 {
        let inst = random_instance(1000 + seed, seed as usize % 4);
        let g = inst.level.grid.dims;
        let vt = build_local_matrix(&inst.rig, &inst.level, inst.mode, inst.hit).map_err(|e| e.to_string())?;
        let fast = transform_local(&inst.features, &vt, g).unwrap();
        let slow = oracle_transform(&inst.features, &inst.rig, &inst.level, inst.mode, inst.hit).unwrap();
        let local = rel_max_err(fast.data(), slow.data());
        let bev = build_global_matrix(&inst.rig, &inst.level, inst.mode, inst.hit).unwrap();
        let fast = transform_global(&inst.features, &bev, [g[0], g[1]]).unwrap();
        let slow = oracle_transform_global(&inst.features, &inst.rig, &inst.level, inst.mode, inst.hit).unwrap();
        let global = rel_max_err(fast.data(), slow.data());
        worst = worst.max(local).max(global);
        check(local <= 1e-5 && global <= 1e-5, format!("instance {seed}: local {local:e}, global {global:e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("50 instances, worst relative error {worst:.2e}, {secs:.1} s"))
}

fn pillar_consistency() -> Outcome {
    let mut worst = 0f64;
    for seed in 0..50u64 {
        let inst = random_instance(1000 + seed, seed as usize % 4);
        let [x, y, z] = inst.level.grid.dims;
        let local = build_local_matrix(&inst.rig, &inst.level, Aggregation::Sum, inst.hit).unwrap();
        let global = build_global_matrix(&inst.rig, &inst.level, Aggregation::Sum, inst.hit).unwrap();
        let vol = transform_local(&inst.features, &local, [x, y, z]).unwrap();
        let bev = transform_global(&inst.features, &global, [x, y]).unwrap();
        let summed: Vec<f32> = vol.data().chunks(z).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32).collect();
        let err = rel_max_err(bev.data(), &summed);
        worst = worst.max(err);
        check(err <= 1e-5, format!("instance {seed}: {err:e}"))?;
    }
    Ok(format!("50 instances, worst relative error {worst:.2e}"))
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn csr_compression() -> Outcome {
    let grid = default_pyramid().levels[0].grid;
    let level =
        LevelConfig { level: 0, grid, sampling: Some(Sampling { subdivision: 3, feature_scale: 0.125 }), channels: 32 };
    let rig = surround_rig();
    let (w, h) = rig.scaled(0.125).unwrap().common_size().unwrap();
    check((w, h) == (200, 112), format!("feature map {w}x{h}"))?;
    let start = Instant::now();
    let m = build_local_matrix(&rig, &level, Aggregation::Mean, HitRule::Nearest).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let stats = m.memory_stats();
    let peak = peak_rss_bytes();
    let detail = format!(
        "{}x{} nnz {}: csr {:.1} MB vs dense {:.1} GB, ratio {:.2e}, {secs:.1} s, peak RSS {}",
        m.rows(),
        m.cols(),
        m.nnz(),
        stats.csr_bytes as f64 / 1e6,
        stats.dense_bytes as f64 / 1e9,
        stats.ratio,
        peak.map_or("unknown".into(), |b| format!("{:.2} GB", b as f64 / 1e9)),
    );
    check(stats.ratio < 0.01, format!("ratio too high: {detail}"))?;
    check(stats.csr_bytes < 500_000_000, format!("csr too large: {detail}"))?;
    check(secs < 300.0, format!("too slow: {detail}"))?;
    let peak = peak.ok_or("peak memory unavailable")?;
    check(peak < 8_000_000_000, format!("too much memory: {detail}"))?;
    Ok(detail)
}

fn fixed_matrices() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let calib = dir.path().join("calib.json");
    let grid = dir.path().join("grid.json");
    write_json(&calib, &rig_to_entries(&surround_rig())).unwrap();
    write_json(&grid, &GridJson::from_spec(&default_pyramid().levels[2].grid)).unwrap();
    let build = |name: &str| {
        let out = dir.path().join(name);
        run_ok(&["build", "--calib", p(&calib), "--grid", p(&grid), "--level", "2", "--out", p(&out)]);
        read_bytes(&out).unwrap()
    };
    let (a, b) = (build("a.ovtc"), build("b.ovtc"));
    check(a == b, "independent builds differ")?;

    let report = dir.path().join("bench.json");
    let prefix = dir.path().join("fixed");
    run_ok(&[
        "bench",
        "--calib",
        p(&calib),
        "--grid",
        p(&grid),
        "--level",
        "2",
        "--repeat",
        "3",
        "--prefix-matrices",
        p(&prefix),
        "--out",
        p(&report),
    ]);
    let r: Value = read_json(&report).unwrap();
    let d = &r["details"];
    let fix_build = d["fix"]["build"]["median_ms"].as_f64().ok_or("no fix build timing")?;
    let fix_total = d["fix"]["total"]["median_ms"].as_f64().ok_or("no fix total timing")?;
    let base_total = d["base"]["total"]["median_ms"].as_f64().ok_or("no base total timing")?;
    check(fix_build == 0.0, format!("fix build median {fix_build} ms"))?;
    check(fix_total < base_total, format!("fix {fix_total:.1} ms not below base {base_total:.1} ms"))?;
    Ok(format!(
        "{} identical bytes; base total {base_total:.1} ms, fix total {fix_total:.1} ms, fix build 0 ms",
        a.len()
    ))
}

fn fusion_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = seeded_fusion(4, 4, 5, &DEFAULT_DILATIONS, 7);
    let local = Volume::new(4, [5, 5, 3], (0..300).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let out = fuse(&local, &BevFeature::zeros(4, [5, 5]), &w).unwrap();
    check(out == refine_local(&local, &w).unwrap(), "zero global is not the refined local volume")?;

    let l = Volume::new(1, [1, 1, 1], vec![2.0]).unwrap();
    let g = BevFeature::new(1, [1, 1], vec![3.0]).unwrap();
    let open = fuse(&l, &g, &routing_fusion(1, 1e4)).unwrap().data()[0];
    let shut = fuse(&l, &g, &routing_fusion(1, -1e4)).unwrap().data()[0];
    check((open - 5.0).abs() <= 1e-6 && (shut - 2.0).abs() <= 1e-6, format!("saturated gates give {open}, {shut}"))?;
    // FFN output 0 puts the gate at one half
    let half = fuse(&l, &g, &routing_fusion(1, 0.0)).unwrap().data()[0];
    check((half - 3.5).abs() <= 1e-6, format!("scalar case gives {half}"))?;
    Ok(format!("open {open}, shut {shut}, scalar {half}"))
}

fn one_hot(gt: &[u8], classes: usize, hi: f32) -> Volume {
    let n = gt.len();
    let mut d = vec![0.0; classes * n];
    for (i, &l) in gt.iter().enumerate() {
        d[l as usize * n + i] = hi;
    }
    Volume::new(classes, [n, 1, 1], d).unwrap()
}

fn labels(l: &[u8], classes: usize) -> LabelVolume {
    LabelVolume::new([l.len(), 1, 1], l.to_vec(), classes).unwrap()
}

fn loss_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt: Vec<u8> = (0..64).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    let g = labels(&gt, NUM_CLASSES);
    let probs = one_hot(&gt, NUM_CLASSES, 1.0);
    let terms = [
        focal_loss(&one_hot(&gt, NUM_CLASSES, 40.0), &g, 2.0, 1.0).unwrap(),
        lovasz_softmax(&probs, &g).unwrap(),
        scal_loss(&probs, &g, ScalKind::Geometric).unwrap(),
        scal_loss(&probs, &g, ScalKind::Semantic).unwrap(),
    ];
    check(terms.iter().all(|t| t.abs() <= 1e-6), format!("perfect prediction losses {terms:?}"))?;

    // cross-entropy computed directly from the logits
    let logits = Volume::new(4, [16, 1, 1], (0..64).map(|_| rng.random_range(-3.0f32..3.0)).collect()).unwrap();
    let lg: Vec<u8> = (0..16).map(|_| rng.random_range(0..4u8)).collect();
    let ce = (0..16)
        .map(|i| {
            let z: Vec<f64> = (0..4).map(|k| logits.data()[k * 16 + i] as f64).collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[lg[i] as usize]
        })
        .sum::<f64>()
        / 16.0;
    let focal = focal_loss(&logits, &labels(&lg, 4), 0.0, 1.0).unwrap();
    check((focal - ce).abs() <= 1e-9, format!("gamma 0 focal {focal} vs cross-entropy {ce}"))?;

    let mut cases = 0;
    for gm in 0..8u8 {
        for pm in 0..8u8 {
            let gt: Vec<u8> = (0..3).map(|i| (gm >> i) & 1).collect();
            let pred: Vec<u8> = (0..3).map(|i| (pm >> i) & 1).collect();
            let got = lovasz_softmax(&one_hot(&pred, 2, 1.0), &labels(&gt, 2)).unwrap();
            let per_class: Vec<f64> = (0..2u8)
                .filter(|c| gt.contains(c))
                .map(|c| {
                    let inter = (0..3).filter(|&i| gt[i] == c && pred[i] == c).count();
                    let union = (0..3).filter(|&i| gt[i] == c || pred[i] == c).count();
                    1.0 - inter as f64 / union as f64
                })
                .collect();
            let want = per_class.iter().sum::<f64>() / per_class.len() as f64;
            check((got - want).abs() < 1e-12, format!("gt {gt:?} pred {pred:?}: {got} vs {want}"))?;
            cases += 1;
        }
    }
    Ok(format!("perfect terms {terms:?}; |focal - ce| {:.1e}; {cases} Lovász cases", (focal - ce).abs()))
}

fn metrics() -> Outcome {
    let c = confusion(&labels(&[1, 2], 3), &labels(&[1, 1], 3), 3, true).unwrap();
    check((c.tp[1], c.fp[1], c.fn_[1], c.tp[2], c.fp[2], c.fn_[2]) == (1, 0, 1, 0, 1, 0), format!("counts {c:?}"))?;
    check(iou(&c, 1) == Some(0.5) && iou(&c, 2) == Some(0.0), "per-class IoU")?;
    check(miou(&c) == Some(0.25), format!("mIoU {:?}", miou(&c)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let gt: Vec<u8> = (0..500).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    let pred: Vec<u8> =
        gt.iter().map(|&l| if rng.random_bool(0.3) { rng.random_range(0..NUM_CLASSES as u8) } else { l }).collect();
    let score = |p: &[u8], g: &[u8]| {
        miou(&confusion(&labels(p, NUM_CLASSES), &labels(g, NUM_CLASSES), NUM_CLASSES, false).unwrap()).unwrap()
    };
    let base = score(&pred, &gt);
    for _ in 0..20 {
        let mut perm: Vec<u8> = (0..NUM_CLASSES as u8).collect();
        perm.shuffle(&mut rng);
        let map = |v: &[u8]| v.iter().map(|&l| perm[l as usize]).collect::<Vec<_>>();
        let m = score(&map(&pred), &map(&gt));
        check((m - base).abs() < 1e-12, format!("relabeled mIoU {m} vs {base}"))?;
    }
    Ok(format!("hand counts exact; mIoU {base:.4} stable over 20 relabelings"))
}

fn routing() -> Outcome {
    const CLASS: u8 = 7;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pyr = single_level_pyramid(32);
    let scene = box_scene(pyr.finest, CLASS);
    write_json(&dir.path().join("scene.json"), &scene).unwrap();
    write_json(&dir.path().join("pyramid.json"), &pyr).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        run_ok(&[
            "pipeline",
            "--scene",
            p(&dir.path().join("scene.json")),
            "--pyramid",
            p(&dir.path().join("pyramid.json")),
            "--routing",
            "--out-dir",
            p(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let same = |f: &str| read_bytes(&a.join(f)).unwrap() == read_bytes(&b.join(f)).unwrap();
    check(same("pred.ovtf") && same("logits_level0.ovtf"), "two runs differ")?;

    let pred = read_tensor(&a.join("pred.ovtf")).unwrap().into_u8().map_err(|e| e.to_string())?;
    let grid = pyr.finest.to_spec().unwrap();
    let s = pyr.levels[0].unwrap();
    let rig = scene.rig().unwrap().scaled(s.feature_scale).unwrap();
    let (mut visible, mut correct) = (0usize, 0usize);
    for col in 0..grid.num_voxels() {
        let idx = grid.voxel_coords(col);
        let centre = grid.voxel_center(idx).unwrap();
        let o = &scene.objects[0];
        if !(0..3).all(|a| centre[a] >= o.min[a] && centre[a] <= o.max[a]) {
            continue;
        }
        let pts = grid.subspace_sample_points(idx, s.subdivision).unwrap();
        if pts.iter().any(|&q| !rig.project_all(q).unwrap().is_empty()) {
            visible += 1;
            correct += (pred[col] == CLASS) as usize;
        }
    }
    check(visible > 0, "no visible box voxels")?;
    let recall = correct as f64 / visible as f64;
    check(recall >= 0.9, format!("{correct}/{visible} visible box voxels recovered"))?;
    Ok(format!("{correct}/{visible} visible box voxels recovered ({:.1}%), runs identical", 100.0 * recall))
}

fn spmm_determinism() -> Outcome {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1, 2, max, 8];
    counts.dedup();
    for seed in 0..10u64 {
        let inst = random_instance(2000 + seed, seed as usize % 4);
        let m = build_local_matrix(&inst.rig, &inst.level, inst.mode, inst.hit).unwrap();
        let f = &inst.features;
        let dense = DenseMatrix::new(f.channels(), m.rows(), f.matrix().data().to_vec()).unwrap();
        let runs: Vec<Vec<u32>> = counts
            .iter()
            .map(|&t| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
                let out = pool.install(|| spmm(&dense, &m)).unwrap();
                out.data().iter().map(|v| v.to_bits()).collect()
            })
            .collect();
        check(runs.windows(2).all(|w| w[0] == w[1]), format!("instance {seed} differs across thread counts"))?;
    }
    Ok(format!("10 instances bit-identical on {counts:?} threads"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("pillar consistency", pillar_consistency),
        ("CSR compression at full scale", csr_compression),
        ("fixed-matrix reproducibility", fixed_matrices),
        ("gated fusion contract", fusion_contract),
        ("loss suite", loss_suite),
        ("metrics", metrics),
        ("end-to-end routing", routing),
        ("spmm thread determinism", spmm_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS - {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL - {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
