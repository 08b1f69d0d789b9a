#![allow(dead_code)]

use occuvt_core::geometry::{CameraModel, ExtrinsicsConvention, Mat4};
use occuvt_core::grid::{GridSpec, LevelConfig, Sampling};
use occuvt_core::{Aggregation, CameraRig, FeatureMaps, HitRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ego→camera transform for a camera at `pos` looking along yaw/pitch
/// (radians). Camera axes: x right, y down, z forward.
pub fn look(pos: [f64; 3], yaw: f64, pitch: f64) -> Mat4 {
    let f = [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin()];
    let r = [yaw.sin(), -yaw.cos(), 0.0];
    let d = [f[1] * r[2] - f[2] * r[1], f[2] * r[0] - f[0] * r[2], f[0] * r[1] - f[1] * r[0]];
    let rows = [r, d, f];
    let mut m = [[0.0; 4]; 4];
    for (i, row) in rows.iter().enumerate() {
        m[i][..3].copy_from_slice(row);
        m[i][3] = -(row[0] * pos[0] + row[1] * pos[1] + row[2] * pos[2]);
    }
    m[3][3] = 1.0;
    m
}

pub fn camera(name: &str, f: f64, size: (u32, u32), ext: Mat4) -> CameraModel {
    let k = [[f, 0.0, size.0 as f64 / 2.0], [0.0, f, size.1 as f64 / 2.0], [0.0, 0.0, 1.0]];
    CameraModel::new(name, k, ext, ExtrinsicsConvention::EgoToCamera, size).unwrap()
}

pub struct Instance {
    pub rig: CameraRig,
    pub level: LevelConfig,
    pub features: FeatureMaps,
    pub mode: Aggregation,
    pub hit: HitRule,
}

/// A small random rig inside a random grid with random features.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = rng.random_range(1..=4);
    let (w, h) = (rng.random_range(8..=24u32), rng.random_range(6..=16u32));
    let f = rng.random_range(3.0..10.0);
    let base = rng.random_range(0.0..std::f64::consts::TAU);
    let cams = (0..nc)
        .map(|i| {
            let yaw = base + std::f64::consts::TAU * i as f64 / nc as f64 + rng.random_range(-0.2..0.2);
            let pos = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..0.5)];
            camera(&format!("cam{i}"), f, (w, h), look(pos, yaw, rng.random_range(-0.2..0.2)))
        })
        .collect();
    let rig = CameraRig::new(cams).unwrap();
    let dims = [rng.random_range(1..=20), rng.random_range(1..=20), rng.random_range(1..=8)];
    let grid = GridSpec::new((-6.0, 6.0), (-6.0, 6.0), (-2.0, 2.0), dims).unwrap();
    let channels = rng.random_range(1..=16);
    let level = LevelConfig {
        level: 0,
        grid,
        sampling: Some(Sampling { subdivision: rng.random_range(1..=3), feature_scale: 1.0 }),
        channels,
    };
    let data = (0..channels * nc * (w * h) as usize).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let features = FeatureMaps::new(nc, h as usize, w as usize, channels, data).unwrap();
    let mode = if rng.random_bool(0.5) { Aggregation::Mean } else { Aggregation::Sum };
    let hit = if rng.random_bool(0.5) { HitRule::Nearest } else { HitRule::Bilinear };
    Instance { rig, level, features, mode, hit }
}

/// `max |a − b| / max |b|` (absolute when `b` is all zero).
pub fn rel_max_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
    let err = a.iter().zip(b).fold(0f64, |m, (&x, &y)| m.max((x as f64 - y as f64).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}
