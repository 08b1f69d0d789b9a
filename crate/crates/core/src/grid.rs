//! Metric voxel grids, the level pyramid, and per-voxel sample points.
//!
//! Voxel `(ix, iy, iz)` has linear index `ix·Y·Z + iy·Z + iz`; BEV cell
//! `(ix, iy)` has `ix·Y + iy`. These fix the column order of the projection
//! matrices.

use alloc::vec::Vec;

use crate::geometry::Point3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), z_range: (f64, f64), dims: [usize; 3]) -> Result<Self> {
        let g = GridSpec { x_range, y_range, z_range, dims };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, (lo, hi), d) in
            [('x', self.x_range, self.dims[0]), ('y', self.y_range, self.dims[1]), ('z', self.z_range, self.dims[2])]
        {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(alloc::format!("{axis} range must satisfy min < max")));
            }
            if d == 0 {
                return Err(Error::invalid(alloc::format!("{axis} dimension must be at least 1")));
            }
            let size = (hi - lo) / d as f64;
            if !(size.is_finite() && size > 0.0) {
                return Err(Error::invalid(alloc::format!("{axis} voxel size is degenerate")));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [(f64, f64); 3] {
        [self.x_range, self.y_range, self.z_range]
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        let r = self.ranges();
        core::array::from_fn(|a| (r[a].1 - r[a].0) / self.dims[a] as f64)
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxel_index(&self, index: [usize; 3]) -> usize {
        index[0] * self.dims[1] * self.dims[2] + index[1] * self.dims[2] + index[2]
    }

    pub fn voxel_coords(&self, linear: usize) -> [usize; 3] {
        let yz = self.dims[1] * self.dims[2];
        [linear / yz, (linear % yz) / self.dims[2], linear % self.dims[2]]
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.dims[1] + iy
    }

    fn check_index(&self, index: [usize; 3]) -> Result<()> {
        if index.iter().zip(self.dims.iter()).any(|(i, d)| i >= d) {
            return Err(Error::invalid(alloc::format!("voxel index {index:?} outside grid {:?}", self.dims)));
        }
        Ok(())
    }

    /// Metric bounds `[min, max)` of a voxel per axis.
    pub fn voxel_bounds(&self, index: [usize; 3]) -> Result<[(f64, f64); 3]> {
        self.check_index(index)?;
        let r = self.ranges();
        let s = self.voxel_size();
        Ok(core::array::from_fn(|a| {
            let lo = r[a].0 + index[a] as f64 * s[a];
            (lo, lo + s[a])
        }))
    }

    pub fn voxel_center(&self, index: [usize; 3]) -> Result<Point3> {
        self.check_index(index)?;
        let r = self.ranges();
        let s = self.voxel_size();
        Ok(core::array::from_fn(|a| r[a].0 + (index[a] as f64 + 0.5) * s[a]))
    }

    /// Centres of the `n³` equal sub-boxes of a voxel, x-major then y then z.
    pub fn subspace_sample_points(&self, index: [usize; 3], n: usize) -> Result<Vec<Point3>> {
        if n == 0 {
            return Err(Error::invalid("subdivision must be at least 1"));
        }
        self.check_index(index)?;
        let mut out = Vec::with_capacity(n * n * n);
        self.push_samples(index, n, &mut out);
        Ok(out)
    }

    /// Sample points of every voxel in the `(ix, iy)` column, in z order.
    pub fn pillar_sample_points(&self, ix: usize, iy: usize, n: usize) -> Result<Vec<Point3>> {
        if n == 0 {
            return Err(Error::invalid("subdivision must be at least 1"));
        }
        self.check_index([ix, iy, 0])?;
        let mut out = Vec::with_capacity(self.dims[2] * n * n * n);
        for iz in 0..self.dims[2] {
            self.push_samples([ix, iy, iz], n, &mut out);
        }
        Ok(out)
    }

    pub(crate) fn push_samples(&self, index: [usize; 3], n: usize, out: &mut Vec<Point3>) {
        let r = self.ranges();
        let s = self.voxel_size();
        let offsets: [Vec<f64>; 3] = core::array::from_fn(|a| {
            (0..n).map(|k| r[a].0 + s[a] * (index[a] as f64 + (k as f64 + 0.5) / n as f64)).collect()
        });
        for &x in &offsets[0] {
            for &y in &offsets[1] {
                for &z in &offsets[2] {
                    out.push([x, y, z]);
                }
            }
        }
    }

    /// The grid of the next coarser level: same extents, each dim halved (floor, min 1).
    pub fn halved(&self) -> GridSpec {
        GridSpec { dims: self.dims.map(halve), ..*self }
    }
}

pub(crate) fn halve(d: usize) -> usize {
    (d / 2).max(1)
}

/// How a matrix-built level samples its voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    /// Subdivisions per voxel axis (`N`); each voxel yields `N³` points.
    pub subdivision: usize,
    /// Feature-map resolution relative to the input image.
    pub feature_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelConfig {
    /// Level index, 0 = finest.
    pub level: usize,
    pub grid: GridSpec,
    /// `None` for levels that receive no projection matrix and are produced
    /// only by upsampling from the coarser level.
    pub sampling: Option<Sampling>,
    pub channels: usize,
}

impl LevelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if let Some(s) = self.sampling {
            if s.subdivision == 0 {
                return Err(Error::invalid("subdivision must be at least 1"));
            }
            if !(s.feature_scale > 0.0 && s.feature_scale <= 1.0) {
                return Err(Error::invalid("feature scale must lie in (0, 1]"));
            }
        }
        if self.channels == 0 {
            return Err(Error::invalid("channel count must be at least 1"));
        }
        Ok(())
    }

    pub fn require_sampling(&self) -> Result<Sampling> {
        self.sampling.ok_or_else(|| Error::invalid(alloc::format!("level {} has no projection sampling", self.level)))
    }
}

/// Levels ordered finest (index 0) to coarsest.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    pub levels: Vec<LevelConfig>,
}

pub const DEFAULT_CHANNELS: usize = 32;

impl PyramidConfig {
    pub fn new(levels: Vec<LevelConfig>) -> Result<Self> {
        let p = PyramidConfig { levels };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            l.validate()?;
            if l.level != i {
                return Err(Error::invalid("pyramid levels must be numbered 0..L in order"));
            }
        }
        for pair in self.levels.windows(2) {
            let (fine, coarse) = (&pair[0].grid, &pair[1].grid);
            if coarse.dims != fine.halved().dims {
                return Err(Error::invalid(alloc::format!(
                    "level {} dims {:?} are not the halving of {:?}",
                    pair[1].level,
                    coarse.dims,
                    fine.dims
                )));
            }
            if pair[0].channels != pair[1].channels {
                return Err(Error::invalid("all pyramid levels must share one channel count"));
            }
        }
        if self.levels.last().map_or(true, |l| l.sampling.is_none()) {
            return Err(Error::invalid("the coarsest level must be projection-built"));
        }
        Ok(())
    }

    pub fn finest(&self) -> &LevelConfig {
        &self.levels[0]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }
}

/// Which subdivision goes with which matrix-built level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubdivisionOrder {
    /// Coarsest matrix-built level gets the largest `N`.
    #[default]
    CoarsestLargest,
    /// Finest matrix-built level gets the largest `N`.
    FinestLargest,
}

/// Four levels over x, y ∈ [−50, 50] m and z ∈ [−5, 3] m with a
/// 200×200×16 finest grid. The three coarser levels are fed by feature maps
/// at 1/8, 1/16 and 1/32 with `N` = 3, 4, 5.
pub fn default_pyramid() -> PyramidConfig {
    pyramid_with_order(SubdivisionOrder::CoarsestLargest)
}

pub fn pyramid_with_order(order: SubdivisionOrder) -> PyramidConfig {
    let finest =
        GridSpec { x_range: (-50.0, 50.0), y_range: (-50.0, 50.0), z_range: (-5.0, 3.0), dims: [200, 200, 16] };
    let subdivisions = match order {
        SubdivisionOrder::CoarsestLargest => [3, 4, 5],
        SubdivisionOrder::FinestLargest => [5, 4, 3],
    };
    let scales = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let mut levels = Vec::with_capacity(4);
    let mut grid = finest;
    for level in 0..4 {
        let sampling =
            (level > 0).then(|| Sampling { subdivision: subdivisions[level - 1], feature_scale: scales[level - 1] });
        levels.push(LevelConfig { level, grid, sampling, channels: DEFAULT_CHANNELS });
        grid = grid.halved();
    }
    PyramidConfig { levels }
}
