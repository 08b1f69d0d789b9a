#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occuvt::config::{rig_to_entries, GridJson, PyramidJson, SamplingJson};
use occuvt::formats::write_json;
use occuvt::synth::{look_extrinsics, SceneObject, SyntheticScene};
use occuvt_core::geometry::ExtrinsicsConvention;
use occuvt_core::grid::{GridSpec, LevelConfig, Sampling};
use occuvt_core::{Aggregation, CameraModel, CameraRig, FeatureMaps, HitRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn occuvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occuvt")).args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = occuvt(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn camera(name: &str, f: f64, size: (u32, u32), pos: [f64; 3], yaw: f64, pitch: f64) -> CameraModel {
    let k = [[f, 0.0, size.0 as f64 / 2.0], [0.0, f, size.1 as f64 / 2.0], [0.0, 0.0, 1.0]];
    CameraModel::new(name, k, look_extrinsics(pos, yaw, pitch), ExtrinsicsConvention::EgoToCamera, size).unwrap()
}

/// Two opposite cameras, 64×36, looking along ±x.
pub fn toy_rig() -> CameraRig {
    CameraRig::new(vec![
        camera("front", 40.0, (64, 36), [0.5, 0.0, 0.0], 0.0, 0.0),
        camera("back", 40.0, (64, 36), [-0.5, 0.0, 0.0], std::f64::consts::PI, 0.0),
    ])
    .unwrap()
}

pub fn toy_grid(z: usize) -> GridSpec {
    GridSpec::new((-10.0, 10.0), (-10.0, 10.0), (-2.0, 2.0), [20, 20, z]).unwrap()
}

pub struct Files {
    pub dir: tempfile::TempDir,
    pub calib: PathBuf,
    pub grid: PathBuf,
}

impl Files {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn toy_files(rig: &CameraRig, grid: &GridSpec) -> Files {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib.json");
    let gpath = dir.path().join("grid.json");
    write_json(&calib, &rig_to_entries(rig)).unwrap();
    write_json(&gpath, &GridJson::from_spec(grid)).unwrap();
    Files { dir, calib, grid: gpath }
}

/// Finest grid 32×32×8 over ±20 m × ±4 m, coarser levels fed at 1/8 and 1/16.
pub fn small_pyramid(channels: usize) -> PyramidJson {
    PyramidJson {
        channels,
        finest: GridJson { x_range: [-20.0, 20.0], y_range: [-20.0, 20.0], z_range: [-4.0, 4.0], dims: [32, 32, 8] },
        levels: vec![
            None,
            Some(SamplingJson { subdivision: 2, feature_scale: 0.125 }),
            Some(SamplingJson { subdivision: 3, feature_scale: 0.0625 }),
        ],
    }
}

/// Single projection-built level, 40×40×8 one-metre voxels, fed at 1/8.
pub fn single_level_pyramid(channels: usize) -> PyramidJson {
    PyramidJson {
        channels,
        finest: GridJson { x_range: [-20.0, 20.0], y_range: [-20.0, 20.0], z_range: [-4.0, 4.0], dims: [40, 40, 8] },
        levels: vec![Some(SamplingJson { subdivision: 2, feature_scale: 0.125 })],
    }
}

pub fn box_scene(grid: GridJson, class: u8) -> SyntheticScene {
    SyntheticScene {
        grid,
        cameras: None,
        objects: vec![SceneObject { min: [6.0, -2.0, -2.0], max: [10.0, 2.0, 1.0], class }],
        background_class: 0,
        seed: 3,
    }
}

pub struct Instance {
    pub rig: CameraRig,
    pub level: LevelConfig,
    pub features: FeatureMaps,
    pub mode: Aggregation,
    pub hit: HitRule,
}

/// Random rig of 1..=4 cameras inside a random grid of at most 20×20×8,
/// `N ≤ 3`, `C ≤ 16`. `variant` picks the aggregation/hit-rule pair.
pub fn random_instance(seed: u64, variant: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = rng.random_range(1..=4);
    let (w, h) = (rng.random_range(8..=32u32), rng.random_range(6..=24u32));
    let f = rng.random_range(4.0..16.0);
    let base = rng.random_range(0.0..std::f64::consts::TAU);
    let cams = (0..nc)
        .map(|i| {
            let yaw = base + std::f64::consts::TAU * i as f64 / nc as f64 + rng.random_range(-0.3..0.3);
            let pos = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
            camera(&format!("cam{i}"), f, (w, h), pos, yaw, rng.random_range(-0.3..0.3))
        })
        .collect();
    let rig = CameraRig::new(cams).unwrap();
    let dims = [rng.random_range(1..=20), rng.random_range(1..=20), rng.random_range(1..=8)];
    let grid = GridSpec::new((-8.0, 8.0), (-8.0, 8.0), (-2.5, 2.5), dims).unwrap();
    let channels = rng.random_range(1..=16);
    let level = LevelConfig {
        level: 0,
        grid,
        sampling: Some(Sampling { subdivision: rng.random_range(1..=3), feature_scale: 1.0 }),
        channels,
    };
    let data = (0..channels * nc * (w * h) as usize).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let features = FeatureMaps::new(nc, h as usize, w as usize, channels, data).unwrap();
    let mode = [Aggregation::Mean, Aggregation::Sum][variant % 2];
    let hit = [HitRule::Nearest, HitRule::Bilinear][(variant / 2) % 2];
    Instance { rig, level, features, mode, hit }
}

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
