//! Local (voxel) and global (BEV) projection matrices.
//!
//! Rows index flattened feature-map pixels `n·H·W + v·W + u`; columns index
//! voxels (local) or BEV cells (global). Multiplying a `C × (Nc·H·W)` feature
//! matrix by a projection matrix lifts every camera's features into the grid
//! in one sparse product.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{CameraRig, Point3, Projection};
use crate::grid::{GridSpec, LevelConfig};
use crate::sparse::{spmm, CsrMatrix};
use crate::tensor::{BevFeature, FeatureMaps, Volume};
use crate::{Error, Result};

/// How the hits of one voxel are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Columns normalised by their total hit weight.
    #[default]
    Mean,
    Sum,
}

/// How a projected sample point reads the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HitRule {
    /// The pixel cell containing the point, weight 1.
    #[default]
    Nearest,
    /// Up to four pixels around the point, weighted bilinearly over pixel centres.
    Bilinear,
}

/// Statistics gathered while building one matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildStats {
    /// Accepted (sample point, camera) projections over the whole grid.
    pub total_hits: u64,
    /// `histogram[k]` = number of columns with exactly `k` accepted projections.
    pub hits_histogram: Vec<u64>,
}

impl BuildStats {
    /// True when no sample point landed in any camera.
    pub fn is_empty(&self) -> bool {
        self.total_hits == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltMatrix {
    pub matrix: CsrMatrix,
    pub stats: BuildStats,
}

/// Both projection matrices of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub local: CsrMatrix,
    pub global: CsrMatrix,
    pub level: LevelConfig,
    pub aggregation: Aggregation,
}

impl ProjectionSet {
    pub fn build(rig: &CameraRig, level: &LevelConfig, mode: Aggregation, hit: HitRule) -> Result<Self> {
        Ok(ProjectionSet {
            local: build_local_matrix(rig, level, mode, hit)?,
            global: build_global_matrix(rig, level, mode, hit)?,
            level: *level,
            aggregation: mode,
        })
    }

    /// Checks the matrix shapes against a feature-map layout and the level grid.
    pub fn check_shapes(&self, num_cameras: usize, height: usize, width: usize) -> Result<()> {
        let rows = num_cameras * height * width;
        let g = &self.level.grid;
        if self.local.rows() != rows || self.local.cols() != g.num_voxels() {
            return Err(Error::shape("local matrix does not match the level"));
        }
        if self.global.rows() != rows || self.global.cols() != g.num_cells() {
            return Err(Error::shape("global matrix does not match the level"));
        }
        Ok(())
    }

    pub fn transform(&self, features: &FeatureMaps) -> Result<(Volume, BevFeature)> {
        let g = &self.level.grid;
        let local = transform_local(features, &self.local, g.dims)?;
        let global = transform_global(features, &self.global, [g.dims[0], g.dims[1]])?;
        Ok((local, global))
    }
}

struct Plan {
    rig: CameraRig,
    width: usize,
    height: usize,
    subdivision: usize,
    grid: GridSpec,
}

impl Plan {
    fn new(rig: &CameraRig, level: &LevelConfig) -> Result<Plan> {
        if rig.is_empty() {
            return Err(Error::invalid("camera rig is empty"));
        }
        level.validate()?;
        let sampling = level.require_sampling()?;
        let rig = rig.scaled(sampling.feature_scale)?;
        let (w, h) = rig.common_size()?;
        Ok(Plan { rig, width: w as usize, height: h as usize, subdivision: sampling.subdivision, grid: level.grid })
    }

    fn rows(&self) -> usize {
        self.rig.len() * self.height * self.width
    }

    /// Feature-map rows (and their weights) touched by `p`, across every camera.
    fn push_hits(&self, p: Point3, rule: HitRule, out: &mut Vec<(u32, f64)>) -> u64 {
        let mut accepted = 0;
        let plane = self.height * self.width;
        for (n, cam) in self.rig.cameras().iter().enumerate() {
            let (u, v) = match cam.project_unchecked(p) {
                Projection::Hit { u, v, .. } => (u, v),
                Projection::Rejected(_) => continue,
            };
            accepted += 1;
            let base = n * plane;
            match rule {
                HitRule::Nearest => {
                    let (iu, iv) = (u as usize, v as usize);
                    out.push(((base + iv * self.width + iu) as u32, 1.0));
                }
                HitRule::Bilinear => {
                    let x = u - 0.5;
                    let y = v - 0.5;
                    let (x0, y0) = (libm::floor(x), libm::floor(y));
                    let (fx, fy) = (x - x0, y - y0);
                    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                            let w = wx * wy;
                            let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
                            if w == 0.0 || px < 0 || py < 0 || px >= self.width as i64 || py >= self.height as i64 {
                                continue;
                            }
                            out.push(((base + py as usize * self.width + px as usize) as u32, w));
                        }
                    }
                }
            }
        }
        accepted
    }
}

const COLUMN_CHUNK: usize = 2048;

struct ChunkOut {
    counts: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f32>,
    hits: Vec<u64>,
}

fn build_matrix<F>(plan: &Plan, cols: usize, mode: Aggregation, rule: HitRule, samples: F) -> Result<BuiltMatrix>
where
    F: Fn(usize, &mut Vec<Point3>) + Sync + Send,
{
    if plan.rows() > u32::MAX as usize {
        return Err(Error::invalid("feature maps too large for 32-bit row ids"));
    }
    let chunks = cols.div_ceil(COLUMN_CHUNK);
    let parts: Vec<ChunkOut> = crate::par::map_collect(chunks, |ci| {
        let start = ci * COLUMN_CHUNK;
        let end = (start + COLUMN_CHUNK).min(cols);
        let mut out = ChunkOut {
            counts: Vec::with_capacity(end - start),
            rows: Vec::new(),
            vals: Vec::new(),
            hits: Vec::with_capacity(end - start),
        };
        let mut points = Vec::new();
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for col in start..end {
            points.clear();
            entries.clear();
            samples(col, &mut points);
            let mut accepted = 0;
            for &p in &points {
                accepted += plan.push_hits(p, rule, &mut entries);
            }
            out.hits.push(accepted);
            let before = out.rows.len();
            merge_column(&mut entries, mode, &mut out.rows, &mut out.vals);
            out.counts.push(out.rows.len() - before);
        }
        out
    });
    finish(plan, cols, parts)
}

/// Sorts a column's hits by row, sums duplicates and applies the aggregation.
fn merge_column(entries: &mut [(u32, f64)], mode: Aggregation, rows: &mut Vec<u32>, vals: &mut Vec<f32>) {
    if entries.is_empty() {
        return;
    }
    // stable: equal rows keep emission order, so sums are reproducible
    entries.sort_by_key(|e| e.0);
    let total: f64 = entries.iter().map(|e| e.1).sum();
    let scale = match mode {
        Aggregation::Mean => 1.0 / total,
        Aggregation::Sum => 1.0,
    };
    let mut i = 0;
    while i < entries.len() {
        let r = entries[i].0;
        let mut w = 0.0;
        while i < entries.len() && entries[i].0 == r {
            w += entries[i].1;
            i += 1;
        }
        rows.push(r);
        vals.push((w * scale) as f32);
    }
}

fn finish(plan: &Plan, cols: usize, parts: Vec<ChunkOut>) -> Result<BuiltMatrix> {
    let nnz: usize = parts.iter().map(|p| p.rows.len()).sum();
    let mut colptr = Vec::with_capacity(cols + 1);
    colptr.push(0usize);
    let mut row_idx = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    let mut per_column_hits = Vec::with_capacity(cols);
    for p in parts {
        for c in p.counts {
            let last = *colptr.last().unwrap();
            colptr.push(last + c);
        }
        row_idx.extend_from_slice(&p.rows);
        vals.extend_from_slice(&p.vals);
        per_column_hits.extend_from_slice(&p.hits);
    }
    let matrix = CsrMatrix::from_csc(plan.rows(), cols, &colptr, &row_idx, &vals)?;
    drop((row_idx, vals, colptr));
    let max = per_column_hits.iter().copied().max().unwrap_or(0) as usize;
    let mut hits_histogram = vec![0u64; max + 1];
    for &h in &per_column_hits {
        hits_histogram[h as usize] += 1;
    }
    let total_hits = per_column_hits.iter().sum();
    Ok(BuiltMatrix { matrix, stats: BuildStats { total_hits, hits_histogram } })
}

/// Local projection matrix `(Nc·H·W) × (X·Y·Z)`.
pub fn build_local_matrix(rig: &CameraRig, level: &LevelConfig, mode: Aggregation, hit: HitRule) -> Result<CsrMatrix> {
    Ok(build_local_matrix_with_stats(rig, level, mode, hit)?.matrix)
}

pub fn build_local_matrix_with_stats(
    rig: &CameraRig,
    level: &LevelConfig,
    mode: Aggregation,
    hit: HitRule,
) -> Result<BuiltMatrix> {
    let plan = Plan::new(rig, level)?;
    let grid = plan.grid;
    let n = plan.subdivision;
    build_matrix(&plan, grid.num_voxels(), mode, hit, |col, pts| grid.push_samples(grid.voxel_coords(col), n, pts))
}

/// Global projection matrix `(Nc·H·W) × (X·Y)`, sampling whole pillars.
pub fn build_global_matrix(rig: &CameraRig, level: &LevelConfig, mode: Aggregation, hit: HitRule) -> Result<CsrMatrix> {
    Ok(build_global_matrix_with_stats(rig, level, mode, hit)?.matrix)
}

pub fn build_global_matrix_with_stats(
    rig: &CameraRig,
    level: &LevelConfig,
    mode: Aggregation,
    hit: HitRule,
) -> Result<BuiltMatrix> {
    let plan = Plan::new(rig, level)?;
    let grid = plan.grid;
    let n = plan.subdivision;
    build_matrix(&plan, grid.num_cells(), mode, hit, |col, pts| {
        let (ix, iy) = (col / grid.dims[1], col % grid.dims[1]);
        for iz in 0..grid.dims[2] {
            grid.push_samples([ix, iy, iz], n, pts);
        }
    })
}

/// Lifts features into a voxel volume: `F_local = X · VT_XYZ`.
pub fn transform_local(features: &FeatureMaps, vt: &CsrMatrix, dims: [usize; 3]) -> Result<Volume> {
    if vt.cols() != dims.iter().product::<usize>() {
        return Err(Error::shape(alloc::format!(
            "matrix has {} columns but grid {dims:?} has {} voxels",
            vt.cols(),
            dims.iter().product::<usize>()
        )));
    }
    let out = spmm(features.matrix(), vt)?;
    Volume::new(features.channels(), dims, out.into_data())
}

/// Lifts features into a BEV plane: `F_global = X · VT_XY`.
pub fn transform_global(features: &FeatureMaps, vt: &CsrMatrix, dims: [usize; 2]) -> Result<BevFeature> {
    if vt.cols() != dims[0] * dims[1] {
        return Err(Error::shape(alloc::format!(
            "matrix has {} columns but BEV {dims:?} has {} cells",
            vt.cols(),
            dims[0] * dims[1]
        )));
    }
    let out = spmm(features.matrix(), vt)?;
    BevFeature::new(features.channels(), dims, out.into_data())
}

/// Reference lifting that samples the feature maps directly, without any
/// matrix. Loops voxel → sample point → camera and aggregates the features
/// each point reads.
pub fn oracle_transform(
    features: &FeatureMaps,
    rig: &CameraRig,
    level: &LevelConfig,
    mode: Aggregation,
    hit: HitRule,
) -> Result<Volume> {
    let grid = level.grid;
    let n = level.require_sampling()?.subdivision;
    let data = oracle_columns(features, rig, level, mode, hit, grid.num_voxels(), |col| {
        grid.subspace_sample_points(grid.voxel_coords(col), n)
    })?;
    Volume::new(features.channels(), grid.dims, data)
}

/// Pillar counterpart of [`oracle_transform`].
pub fn oracle_transform_global(
    features: &FeatureMaps,
    rig: &CameraRig,
    level: &LevelConfig,
    mode: Aggregation,
    hit: HitRule,
) -> Result<BevFeature> {
    let grid = level.grid;
    let n = level.require_sampling()?.subdivision;
    let data = oracle_columns(features, rig, level, mode, hit, grid.num_cells(), |col| {
        grid.pillar_sample_points(col / grid.dims[1], col % grid.dims[1], n)
    })?;
    BevFeature::new(features.channels(), [grid.dims[0], grid.dims[1]], data)
}

fn oracle_columns<F>(
    features: &FeatureMaps,
    rig: &CameraRig,
    level: &LevelConfig,
    mode: Aggregation,
    hit: HitRule,
    cols: usize,
    samples: F,
) -> Result<Vec<f32>>
where
    F: Fn(usize) -> Result<Vec<Point3>>,
{
    let scale = level.require_sampling()?.feature_scale;
    let cams = rig.scaled(scale)?;
    for (i, cam) in cams.cameras().iter().enumerate() {
        let (w, h) = cam.image_size();
        if i >= features.num_cameras() || w as usize != features.width() || h as usize != features.height() {
            return Err(Error::shape("feature maps do not match the scaled camera rig"));
        }
    }
    if cams.len() != features.num_cameras() {
        return Err(Error::shape("feature maps do not match the camera count"));
    }
    let ch = features.channels();
    let (fw, fh) = (features.width() as i64, features.height() as i64);
    let mut out = vec![0f32; ch * cols];
    let mut acc = vec![0f64; ch];
    for col in 0..cols {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut weight = 0.0f64;
        for p in samples(col)? {
            for (cam_idx, cam) in cams.cameras().iter().enumerate() {
                let Some((u, v, _)) = cam.project_point(p)?.hit() else { continue };
                let mut read = |px: i64, py: i64, w: f64| {
                    if w == 0.0 || px < 0 || py < 0 || px >= fw || py >= fh {
                        return;
                    }
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += w * features.get(c, cam_idx, py as usize, px as usize) as f64;
                    }
                    weight += w;
                };
                match hit {
                    HitRule::Nearest => read(libm::floor(u) as i64, libm::floor(v) as i64, 1.0),
                    HitRule::Bilinear => {
                        let (cx, cy) = (u - 0.5, v - 0.5);
                        let (x0, y0) = (libm::floor(cx), libm::floor(cy));
                        let (ax, ay) = (cx - x0, cy - y0);
                        let (x0, y0) = (x0 as i64, y0 as i64);
                        read(x0, y0, (1.0 - ax) * (1.0 - ay));
                        read(x0 + 1, y0, ax * (1.0 - ay));
                        read(x0, y0 + 1, (1.0 - ax) * ay);
                        read(x0 + 1, y0 + 1, ax * ay);
                    }
                }
            }
        }
        if weight == 0.0 {
            continue;
        }
        let norm = match mode {
            Aggregation::Mean => weight,
            Aggregation::Sum => 1.0,
        };
        for (c, a) in acc.iter().enumerate() {
            out[c * cols + col] = (a / norm) as f32;
        }
    }
    Ok(out)
}
