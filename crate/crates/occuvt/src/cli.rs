//! Command-line surface.

use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use occuvt_core::eval::{self, LabelVolume};
use occuvt_core::fusion::init::{routing_weights, seeded_weights};
use occuvt_core::fusion::{run_pipeline, LevelInput, PipelineWeights};
use occuvt_core::grid::{default_pyramid, GridSpec, LevelConfig, Sampling};
use occuvt_core::projector::{
    build_global_matrix_with_stats, build_local_matrix_with_stats, oracle_transform, oracle_transform_global,
    transform_global, transform_local, BuiltMatrix,
};
use occuvt_core::sparse::CSR_VERSION;
use occuvt_core::tensor::{Tensor, TENSOR_VERSION};
use occuvt_core::{Aggregation, BevFeature, CameraRig, FeatureMaps, HitRule, ProjectionSet, Volume, NUM_CLASSES};
use serde::Serialize;

use crate::bench::{run_bench, BenchConfig};
use crate::config::{load_grid, load_pyramid, load_rig, rig_to_entries, GridJson, PyramidJson};
use crate::error::{CliError, CliResult};
use crate::formats::{
    create_dir, read_bytes, read_json, read_tensor, sha256_hex, write_json, write_matrix, write_tensor,
};
use crate::report::{digest_parts, MemoryReport, RunReport};
use crate::synth::SyntheticScene;
use crate::weights::{load_bundle, save_bundle};

static VERSION: LazyLock<String> =
    LazyLock::new(|| format!("{} (OVTC v{CSR_VERSION}, OVTF v{TENSOR_VERSION})", env!("CARGO_PKG_VERSION")));

#[derive(Debug, Parser)]
#[command(name = "occuvt", version = VERSION.as_str(), about = "Projection-matrix view transformation for 3D occupancy")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "OCCUVT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a projection matrix from calibration and a grid.
    Build(BuildArgs),
    /// Lift feature maps with a stored projection matrix.
    Transform(TransformArgs),
    /// Lift feature maps by direct sampling, without a matrix.
    Oracle(OracleArgs),
    /// Run the full pipeline on a synthetic scene.
    Pipeline(PipelineArgs),
    /// Time matrix building against reuse of fixed matrices.
    Bench(BenchArgs),
    /// IoU table and mIoU of a predicted label volume.
    Metrics(MetricsArgs),
    /// Render a synthetic scene to feature maps and labels.
    Scene(SceneArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HitArg {
    Nearest,
    Bilinear,
}

impl From<ModeArg> for Aggregation {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mean => Aggregation::Mean,
            ModeArg::Sum => Aggregation::Sum,
        }
    }
}

impl From<HitArg> for HitRule {
    fn from(h: HitArg) -> Self {
        match h {
            HitArg::Nearest => HitRule::Nearest,
            HitArg::Bilinear => HitRule::Bilinear,
        }
    }
}

/// Sampling of a single level. `--n` and `--scale` default to the default
/// pyramid's values for `--level`.
#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = HitArg::Nearest)]
    pub hit: HitArg,
}

impl SamplingArgs {
    pub fn level_config(&self, grid: GridSpec, channels: usize) -> CliResult<LevelConfig> {
        let defaults = default_pyramid().levels.get(self.level).and_then(|l| l.sampling);
        let subdivision = self.n.or(defaults.map(|s| s.subdivision));
        let feature_scale = self.scale.or(defaults.map(|s| s.feature_scale));
        let (Some(subdivision), Some(feature_scale)) = (subdivision, feature_scale) else {
            return Err(CliError::input(format!("level {} has no default sampling; pass --n and --scale", self.level)));
        };
        let level =
            LevelConfig { level: self.level, grid, sampling: Some(Sampling { subdivision, feature_scale }), channels };
        level.validate()?;
        Ok(level)
    }

    fn describe(&self) -> String {
        format!("{:?}|{:?}|{:?}|{:?}|{:?}", self.level, self.n, self.scale, self.mode, self.hit)
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Build the pillar (BEV) matrix instead of the voxel matrix.
    #[arg(long)]
    pub bev: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub bev: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub bev: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Weight bundle directory.
    #[arg(long, conflicts_with_all = ["seed", "routing"])]
    pub weights: Option<PathBuf>,
    /// Seeded random weights (defaults to the scene seed).
    #[arg(long, conflicts_with = "routing")]
    pub seed: Option<u64>,
    /// Analytic routing weights: closed gates, identity refiners and head.
    #[arg(long)]
    pub routing: bool,
    /// Pyramid JSON; the default four-level pyramid when absent.
    #[arg(long)]
    pub pyramid: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HitArg::Nearest)]
    pub hit: HitArg,
    /// Also write the weights used as a bundle into this directory.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long, default_value_t = occuvt_core::grid::DEFAULT_CHANNELS)]
    pub channels: usize,
    /// Directory of fixed matrices; built and saved there when missing.
    #[arg(long)]
    pub prefix_matrices: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = NUM_CLASSES)]
    pub num_classes: usize,
    /// Count the empty class in mIoU.
    #[arg(long)]
    pub keep_empty: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Pyramid level whose grid and feature scale are rendered.
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    #[arg(long)]
    pub pyramid: Option<PathBuf>,
    #[arg(long, default_value_t = NUM_CLASSES)]
    pub channels: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Build(a) => cmd_build(&a),
        Command::Transform(a) => cmd_transform(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Scene(a) => cmd_scene(&a),
    })
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn print_json<T: Serialize>(v: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Sidecar path of an output file: `<out>.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct BuildSidecar {
    kind: &'static str,
    rows: usize,
    cols: usize,
    nnz: usize,
    build_ms: f64,
    sha256: String,
    subdivision: usize,
    feature_scale: f64,
    feature_width: u32,
    feature_height: u32,
    memory: MemoryReport,
}

fn check_mean_columns(m: &BuiltMatrix, mode: Aggregation) -> CliResult<()> {
    if mode != Aggregation::Mean {
        return Ok(());
    }
    let counts = m.matrix.column_counts();
    for (c, s) in m.matrix.column_sums().iter().enumerate() {
        if counts[c] > 0 && (s - 1.0).abs() > 1e-4 {
            return Err(CliError::Invariant(format!("mean column {c} sums to {s}")));
        }
    }
    Ok(())
}

fn cmd_build(a: &BuildArgs) -> CliResult<()> {
    let rig = load_rig(&a.calib)?;
    let level = a.sampling.level_config(load_grid(&a.grid)?, 1)?;
    let (mode, hit) = (a.sampling.mode.into(), a.sampling.hit.into());
    let t = Instant::now();
    let built = if a.bev {
        build_global_matrix_with_stats(&rig, &level, mode, hit)?
    } else {
        build_local_matrix_with_stats(&rig, &level, mode, hit)?
    };
    let build_ms = elapsed_ms(t);
    check_mean_columns(&built, mode)?;
    let bytes = built.matrix.to_bytes();
    let sampling = level.require_sampling()?;
    let (fw, fh) = rig.scaled(sampling.feature_scale)?.common_size()?;
    let sidecar = BuildSidecar {
        kind: if a.bev { "global" } else { "local" },
        rows: built.matrix.rows(),
        cols: built.matrix.cols(),
        nnz: built.matrix.nnz(),
        build_ms,
        sha256: sha256_hex(&bytes),
        subdivision: sampling.subdivision,
        feature_scale: sampling.feature_scale,
        feature_width: fw,
        feature_height: fh,
        memory: MemoryReport::new(&built.matrix, Some(&built.stats)),
    };
    write_matrix(&a.out, &built.matrix)?;
    write_json(&sidecar_path(&a.out), &sidecar)?;
    println!(
        "{} matrix {}x{} nnz {} ({:.1} ms) sha256 {}",
        sidecar.kind, sidecar.rows, sidecar.cols, sidecar.nnz, build_ms, sidecar.sha256
    );
    Ok(())
}

fn write_lifted(out: &Path, lifted: Lifted) -> CliResult<()> {
    let t = match &lifted {
        Lifted::Volume(v) => v.to_tensor(),
        Lifted::Bev(b) => b.to_tensor(),
    };
    write_tensor(out, &t)
}

enum Lifted {
    Volume(Volume),
    Bev(BevFeature),
}

fn load_features(path: &Path) -> CliResult<FeatureMaps> {
    Ok(FeatureMaps::from_tensor(read_tensor(path)?)?)
}

fn cmd_transform(a: &TransformArgs) -> CliResult<()> {
    let feats = load_features(&a.features)?;
    let vt = crate::formats::read_matrix(&a.matrix)?;
    let grid = load_grid(&a.grid)?;
    let lifted = if a.bev {
        Lifted::Bev(transform_global(&feats, &vt, [grid.dims[0], grid.dims[1]])?)
    } else {
        Lifted::Volume(transform_local(&feats, &vt, grid.dims)?)
    };
    write_lifted(&a.out, lifted)
}

fn cmd_oracle(a: &OracleArgs) -> CliResult<()> {
    let feats = load_features(&a.features)?;
    let rig = load_rig(&a.calib)?;
    let level = a.sampling.level_config(load_grid(&a.grid)?, feats.channels())?;
    let (mode, hit) = (a.sampling.mode.into(), a.sampling.hit.into());
    let lifted = if a.bev {
        Lifted::Bev(oracle_transform_global(&feats, &rig, &level, mode, hit)?)
    } else {
        Lifted::Volume(oracle_transform(&feats, &rig, &level, mode, hit)?)
    };
    write_lifted(&a.out, lifted)
}

#[derive(Debug, Serialize)]
pub struct MetricsJson {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub geometric_iou: Option<f64>,
    pub ignore_empty: bool,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

pub fn metrics_json(
    pred: &LabelVolume,
    gt: &LabelVolume,
    classes: usize,
    ignore_empty: bool,
) -> CliResult<MetricsJson> {
    let c = eval::confusion(pred, gt, classes, ignore_empty)?;
    Ok(MetricsJson {
        per_class_iou: (0..classes).map(|k| eval::iou(&c, k)).collect(),
        miou: eval::miou(&c),
        geometric_iou: c.geometric_iou(),
        ignore_empty,
        tp: c.tp.clone(),
        fp: c.fp.clone(),
        fn_: c.fn_.clone(),
    })
}

fn load_labels(path: &Path, classes: usize) -> CliResult<LabelVolume> {
    let t: Tensor = read_tensor(path)?;
    if t.dims.len() != 3 {
        return Err(CliError::Shape(format!("{}: labels must be [X, Y, Z], got {:?}", path.display(), t.dims)));
    }
    let dims = [t.dims[0], t.dims[1], t.dims[2]];
    Ok(LabelVolume::new(dims, t.into_u8()?, classes)?)
}

fn labels_tensor(l: &LabelVolume) -> Tensor {
    Tensor::u8(l.dims().to_vec(), l.labels().to_vec()).expect("label dims match")
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult<()> {
    if a.num_classes == 0 || a.num_classes > 256 {
        return Err(CliError::input("--num-classes must lie in 1..=256"));
    }
    let pred = load_labels(&a.pred, a.num_classes)?;
    let gt = load_labels(&a.gt, a.num_classes)?;
    let m = metrics_json(&pred, &gt, a.num_classes, !a.keep_empty)?;
    match &a.out {
        Some(p) => write_json(p, &m),
        None => print_json(&m),
    }
}

fn resolve_pyramid(path: Option<&Path>) -> CliResult<occuvt_core::PyramidConfig> {
    match path {
        Some(p) => load_pyramid(p),
        None => Ok(default_pyramid()),
    }
}

fn cmd_scene(a: &SceneArgs) -> CliResult<()> {
    let scene: SyntheticScene = read_json(&a.scene)?;
    let finest = scene.validate()?;
    let pyramid = resolve_pyramid(a.pyramid.as_deref())?;
    check_scene_grid(&finest, &pyramid)?;
    let level =
        pyramid.levels.get(a.level).ok_or_else(|| CliError::input(format!("pyramid has no level {}", a.level)))?;
    let sampling = level.require_sampling()?;
    let rig = scene.rig()?;
    let feats = scene.render_features(&rig.scaled(sampling.feature_scale)?, a.channels)?;
    let gt = eval::gt_pyramid(&scene.ground_truth(&finest)?, a.level + 1, NUM_CLASSES);
    create_dir(&a.out_dir)?;
    write_tensor(&a.out_dir.join("features.ovtf"), &feats.to_tensor())?;
    write_tensor(&a.out_dir.join("gt.ovtf"), &labels_tensor(&gt[a.level]))?;
    write_json(&a.out_dir.join("calib.json"), &rig_to_entries(&rig))?;
    write_json(&a.out_dir.join("grid.json"), &GridJson::from_spec(&level.grid))?;
    println!(
        "rendered {} cameras at {}x{} for level {} grid {:?}",
        feats.num_cameras(),
        feats.width(),
        feats.height(),
        a.level,
        level.grid.dims
    );
    Ok(())
}

fn check_scene_grid(scene: &GridSpec, pyramid: &occuvt_core::PyramidConfig) -> CliResult<()> {
    if *scene != pyramid.finest().grid {
        return Err(CliError::Shape(format!(
            "scene grid {:?} differs from the pyramid's finest grid {:?}",
            scene.dims,
            pyramid.finest().grid.dims
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct LevelLoss {
    level: usize,
    focal: f64,
    lovasz: f64,
    scal_geo: f64,
    scal_sem: f64,
}

#[derive(Debug, Serialize)]
struct PipelineMetrics {
    #[serde(flatten)]
    iou: MetricsJson,
    losses: Vec<LevelLoss>,
    total_loss: f64,
    /// Among occupied voxels of the finest level that some camera sees, the
    /// fraction labelled correctly. Present when the finest level is
    /// projection-built.
    #[serde(skip_serializing_if = "Option::is_none")]
    visible_recall: Option<f64>,
}

fn pipeline_weights(a: &PipelineArgs, pyramid: &occuvt_core::PyramidConfig, seed: u64) -> CliResult<PipelineWeights> {
    let w = match (&a.weights, a.routing) {
        (Some(dir), _) => load_bundle(dir)?,
        (None, true) => routing_weights(pyramid, NUM_CLASSES),
        (None, false) => seeded_weights(pyramid, NUM_CLASSES, a.seed.unwrap_or(seed)),
    };
    w.validate(pyramid)?;
    if w.num_classes != NUM_CLASSES {
        return Err(CliError::Shape(format!("weights predict {} classes, expected {NUM_CLASSES}", w.num_classes)));
    }
    Ok(w)
}

fn cmd_pipeline(a: &PipelineArgs) -> CliResult<()> {
    let scene_bytes = read_bytes(&a.scene)?;
    let scene: SyntheticScene = serde_json::from_slice(&scene_bytes)
        .map_err(|e| CliError::input(format!("{}: invalid JSON: {e}", a.scene.display())))?;
    let finest = scene.validate()?;
    let pyramid = resolve_pyramid(a.pyramid.as_deref())?;
    check_scene_grid(&finest, &pyramid)?;
    let weights = pipeline_weights(a, &pyramid, scene.seed)?;
    let rig: CameraRig = scene.rig()?;
    let hit: HitRule = a.hit.into();
    let c = pyramid.channels();

    let pyramid_bytes = serde_json::to_vec(&PyramidJson::from_config(&pyramid))?;
    let weight_desc = match (&a.weights, a.routing) {
        (Some(d), _) => format!("bundle:{}", d.display()),
        (None, true) => "routing".to_string(),
        (None, false) => format!("seed:{}", a.seed.unwrap_or(scene.seed)),
    };
    let mut report = RunReport::new(
        "pipeline",
        digest_parts(&[&scene_bytes, &pyramid_bytes, weight_desc.as_bytes(), format!("{:?}", a.hit).as_bytes()]),
    );

    let mut feats = Vec::new();
    let mut projs = Vec::new();
    for level in &pyramid.levels {
        let Some(s) = level.sampling else {
            feats.push(None);
            projs.push(None);
            continue;
        };
        let t = Instant::now();
        let f = scene.render_features(&rig.scaled(s.feature_scale)?, c)?;
        report.timings_ms.insert(format!("level{}.render", level.level), elapsed_ms(t));
        let t = Instant::now();
        let p = ProjectionSet::build(&rig, level, Aggregation::Mean, hit)?;
        report.timings_ms.insert(format!("level{}.build", level.level), elapsed_ms(t));
        report.memory.insert(format!("level{}.local", level.level), MemoryReport::new(&p.local, None));
        report.memory.insert(format!("level{}.global", level.level), MemoryReport::new(&p.global, None));
        feats.push(Some(f));
        projs.push(Some(p));
    }
    let inputs: Vec<Option<LevelInput<'_>>> = feats
        .iter()
        .zip(&projs)
        .map(|(f, p)| match (f, p) {
            (Some(features), Some(projections)) => Some(LevelInput { features, projections }),
            _ => None,
        })
        .collect();
    let t = Instant::now();
    let out = run_pipeline(&inputs, &weights, &pyramid)?;
    report.timings_ms.insert("pipeline".into(), elapsed_ms(t));
    if let Some(l) = out.logits.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Invariant(format!("level {l} logits are not finite")));
    }

    let gt = eval::gt_pyramid(&scene.ground_truth(&finest)?, pyramid.levels.len(), NUM_CLASSES);
    let pred = LabelVolume::argmax(&out.logits[0])?;
    let iou = metrics_json(&pred, &gt[0], NUM_CLASSES, true)?;
    let mut losses = Vec::new();
    for (l, (lg, g)) in out.logits.iter().zip(&gt).enumerate() {
        let t = eval::level_loss(lg, g)?;
        losses.push(LevelLoss {
            level: l,
            focal: t.focal,
            lovasz: t.lovasz,
            scal_geo: t.scal_geo,
            scal_sem: t.scal_sem,
        });
    }
    let total_loss = eval::total_loss(&out.logits, &gt, eval::losses::DEFAULT_DECAY)?;
    let visible_recall = projs[0].as_ref().and_then(|p| {
        let counts = p.local.column_counts();
        let (mut seen, mut right) = (0usize, 0usize);
        for (i, (&g, &pr)) in gt[0].labels().iter().zip(pred.labels()).enumerate() {
            if g != 0 && counts[i] > 0 {
                seen += 1;
                right += usize::from(g == pr);
            }
        }
        (seen > 0).then(|| right as f64 / seen as f64)
    });
    if let Some(m) = iou.miou {
        report.metrics.insert("miou".into(), m);
    }
    if let Some(g) = iou.geometric_iou {
        report.metrics.insert("geometric_iou".into(), g);
    }
    if let Some(r) = visible_recall {
        report.metrics.insert("visible_recall".into(), r);
    }
    report.metrics.insert("total_loss".into(), total_loss);

    create_dir(&a.out_dir)?;
    for (l, lg) in out.logits.iter().enumerate() {
        write_tensor(&a.out_dir.join(format!("logits_level{l}.ovtf")), &lg.to_tensor())?;
    }
    write_tensor(&a.out_dir.join("pred.ovtf"), &labels_tensor(&pred))?;
    write_tensor(&a.out_dir.join("gt.ovtf"), &labels_tensor(&gt[0]))?;
    write_json(&a.out_dir.join("metrics.json"), &PipelineMetrics { iou, losses, total_loss, visible_recall })?;
    write_json(&a.out_dir.join("report.json"), &report)?;
    if let Some(dir) = &a.save_weights {
        save_bundle(dir, &weights)?;
    }
    println!(
        "pipeline done: mIoU {} visible recall {}",
        report.metrics.get("miou").map_or("n/a".into(), |m| format!("{m:.4}")),
        visible_recall.map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let rig = load_rig(&a.calib)?;
    let level = a.sampling.level_config(load_grid(&a.grid)?, a.channels)?;
    let cfg = BenchConfig {
        rig,
        level,
        mode: a.sampling.mode.into(),
        hit: a.sampling.hit.into(),
        repeat: a.repeat,
        channels: a.channels,
        prefix: a.prefix_matrices.clone(),
        seed: a.seed,
    };
    let digest = digest_parts(&[
        &read_bytes(&a.calib)?,
        &read_bytes(&a.grid)?,
        a.sampling.describe().as_bytes(),
        format!("{}|{}|{}", a.repeat, a.channels, a.seed).as_bytes(),
    ]);
    let bench = run_bench(&cfg)?;
    let mut report = RunReport::new("bench", digest);
    report.timings_ms.insert("base.build.median".into(), bench.base.build.median_ms);
    report.timings_ms.insert("base.total.median".into(), bench.base.total.median_ms);
    if let Some(f) = &bench.fix {
        report.timings_ms.insert("fix.build.median".into(), f.build.median_ms);
        report.timings_ms.insert("fix.total.median".into(), f.total.median_ms);
    }
    report.memory.insert("local".into(), bench.local.clone());
    report.memory.insert("global".into(), bench.global.clone());
    report.metrics.insert("local.ratio".into(), bench.local.ratio);
    report.metrics.insert("local.nnz".into(), bench.local.nnz as f64);
    report.details = serde_json::to_value(&bench)?;
    match &a.out {
        Some(p) => write_json(p, &report),
        None => print_json(&report),
    }
}
