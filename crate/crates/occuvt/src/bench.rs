//! Build-versus-fixed timing of the lifting step.
//!
//! The base path rebuilds both projection matrices on every repeat before
//! lifting; the fixed path reads serialized matrices once and only lifts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use occuvt_core::grid::LevelConfig;
use occuvt_core::projector::{build_global_matrix, build_local_matrix_with_stats};
use occuvt_core::{Aggregation, CameraRig, FeatureMaps, HitRule, ProjectionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::formats::{create_dir, read_matrix, write_matrix};
use crate::report::{MemoryReport, Summary};

pub const LOCAL_FILE: &str = "local.ovtc";
pub const GLOBAL_FILE: &str = "global.ovtc";

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rig: CameraRig,
    pub level: LevelConfig,
    pub mode: Aggregation,
    pub hit: HitRule,
    pub repeat: usize,
    pub channels: usize,
    pub prefix: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTimings {
    pub build: Summary,
    pub transform: Summary,
    pub total: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub base: StageTimings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix: Option<StageTimings>,
    /// One-off cost of preparing the fixed matrices (load, or build and save).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix_ms: Option<f64>,
    pub local: MemoryReport,
    pub global: MemoryReport,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn random_features(rig: &CameraRig, scale: f64, channels: usize, seed: u64) -> CliResult<FeatureMaps> {
    let (w, h) = rig.scaled(scale)?.common_size()?;
    let n = channels * rig.len() * (w * h) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Ok(FeatureMaps::new(rig.len(), h as usize, w as usize, channels, data)?)
}

fn load_or_build(dir: &Path, cfg: &BenchConfig) -> CliResult<ProjectionSet> {
    let (lp, gp) = (dir.join(LOCAL_FILE), dir.join(GLOBAL_FILE));
    if lp.exists() && gp.exists() {
        return Ok(ProjectionSet {
            local: read_matrix(&lp)?,
            global: read_matrix(&gp)?,
            level: cfg.level,
            aggregation: cfg.mode,
        });
    }
    create_dir(dir)?;
    let set = ProjectionSet::build(&cfg.rig, &cfg.level, cfg.mode, cfg.hit)?;
    write_matrix(&lp, &set.local)?;
    write_matrix(&gp, &set.global)?;
    Ok(set)
}

pub fn run_bench(cfg: &BenchConfig) -> CliResult<BenchReport> {
    if cfg.repeat == 0 {
        return Err(CliError::input("repeat must be at least 1"));
    }
    let scale = cfg.level.require_sampling()?.feature_scale;
    let feats = random_features(&cfg.rig, scale, cfg.channels, cfg.seed)?;

    let (mut build, mut transform, mut total) = (vec![], vec![], vec![]);
    let mut last = None;
    for _ in 0..cfg.repeat {
        let t = Instant::now();
        let local = build_local_matrix_with_stats(&cfg.rig, &cfg.level, cfg.mode, cfg.hit)?;
        let global = build_global_matrix(&cfg.rig, &cfg.level, cfg.mode, cfg.hit)?;
        let b = ms(t);
        let set = ProjectionSet { local: local.matrix, global, level: cfg.level, aggregation: cfg.mode };
        let t = Instant::now();
        let out = set.transform(&feats)?;
        let tr = ms(t);
        build.push(b);
        transform.push(tr);
        total.push(b + tr);
        last = Some((set, local.stats, out));
    }
    let (set, stats, base_out) = last.expect("repeat >= 1");
    let base =
        StageTimings { build: Summary::of(&build), transform: Summary::of(&transform), total: Summary::of(&total) };

    let (mut fix, mut prefix_ms) = (None, None);
    if let Some(dir) = &cfg.prefix {
        let t = Instant::now();
        let fixed = load_or_build(dir, cfg)?;
        prefix_ms = Some(ms(t));
        fixed.check_shapes(feats.num_cameras(), feats.height(), feats.width())?;
        let mut transform = vec![];
        for _ in 0..cfg.repeat {
            let t = Instant::now();
            let out = fixed.transform(&feats)?;
            transform.push(ms(t));
            if out != base_out && fixed.local == set.local && fixed.global == set.global {
                return Err(CliError::Invariant("fixed matrices lift differently from fresh ones".into()));
            }
        }
        let zeros = vec![0.0; cfg.repeat];
        fix = Some(StageTimings {
            build: Summary::of(&zeros),
            transform: Summary::of(&transform),
            total: Summary::of(&transform),
        });
    }
    Ok(BenchReport {
        base,
        fix,
        prefix_ms,
        local: MemoryReport::new(&set.local, Some(&stats)),
        global: MemoryReport::new(&set.global, None),
    })
}
