//! Global-local attention fusion and the coarse-to-fine volume pyramid.
//!
//! Per level the local volume and the BEV plane are refined separately and
//! merged as
//!
//! ```text
//! out = L + σ(FFN(L)) ⊙ expand_z(G)
//! L   = conv3d(local)
//! G   = aspp(g + attn(g)),  g = conv2d(global)
//! ```
//!
//! Refiner convolutions are linear; the only nonlinearities are the FFN
//! ReLU, the attention softmax and the gate sigmoid.

pub mod attention;
pub mod init;
pub mod layers;
pub mod pipeline;

use alloc::vec;
use alloc::vec::Vec;

pub use attention::WindowAttention;
pub use layers::{sigmoid, Conv2d, Conv3d, Deconv3d, Linear};
pub use pipeline::{run_pipeline, LevelInput, LevelWeights, PipelineOutput, PipelineWeights};

use crate::grid::halve;
use crate::tensor::{BevFeature, Volume};
use crate::{Error, Result};

/// Bottleneck ASPP: 1×1 reduce, summed parallel dilated 3×3 branches, 1×1
/// restore, residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct Aspp {
    pub reduce: Conv2d,
    pub branches: Vec<Conv2d>,
    pub restore: Conv2d,
}

impl Aspp {
    pub fn zeros(channels: usize, bottleneck: usize, dilations: &[usize]) -> Self {
        Aspp {
            reduce: Conv2d::zeros(channels, bottleneck, 1, 1),
            branches: dilations.iter().map(|&d| Conv2d::zeros(bottleneck, bottleneck, 3, d)).collect(),
            restore: Conv2d::zeros(bottleneck, channels, 1, 1),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        self.reduce.validate("aspp.reduce")?;
        self.restore.validate("aspp.restore")?;
        let b = self.reduce.out_ch;
        if self.reduce.in_ch != channels || self.restore.out_ch != channels || self.restore.in_ch != b {
            return Err(Error::shape("aspp reduce/restore channels disagree"));
        }
        if self.reduce.kernel != 1 || self.restore.kernel != 1 {
            return Err(Error::invalid("aspp reduce/restore must be 1x1"));
        }
        for br in &self.branches {
            br.validate("aspp.branch")?;
            if br.in_ch != b || br.out_ch != b || br.kernel != 3 {
                return Err(Error::shape("aspp branches must be 3x3 on the bottleneck width"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &BevFeature) -> Result<BevFeature> {
        let reduced = self.reduce.forward(x)?;
        let mut sum = BevFeature::zeros(reduced.channels(), reduced.dims());
        for br in &self.branches {
            let y = br.forward(&reduced)?;
            for (s, v) in sum.data_mut().iter_mut().zip(y.data()) {
                *s += *v;
            }
        }
        let mut out = self.restore.forward(&sum)?;
        for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
            *o += *v;
        }
        Ok(out)
    }
}

/// Weights of one level's fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `C → C_h`, followed by ReLU.
    pub ffn_in: Linear,
    /// `C_h → C`, followed by the gate sigmoid.
    pub ffn_out: Linear,
    pub conv3d: Conv3d,
    pub conv2d: Conv2d,
    pub attention: WindowAttention,
    pub aspp: Aspp,
}

impl FusionWeights {
    pub fn channels(&self) -> usize {
        self.conv3d.in_ch
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        self.ffn_in.validate("ffn_in")?;
        self.ffn_out.validate("ffn_out")?;
        if self.ffn_in.in_dim != c || self.ffn_out.out_dim != c || self.ffn_in.out_dim != self.ffn_out.in_dim {
            return Err(Error::shape("ffn dims must be C -> C_h -> C"));
        }
        if self.ffn_in.out_dim == 0 {
            return Err(Error::invalid("ffn hidden width must be at least 1"));
        }
        self.conv3d.validate("conv3d")?;
        self.conv2d.validate("conv2d")?;
        if self.conv3d.out_ch != c || self.conv2d.in_ch != c || self.conv2d.out_ch != c || self.conv2d.kernel != 3 {
            return Err(Error::shape("refiner convolutions must be 3x3(x3) C -> C"));
        }
        self.attention.validate()?;
        if self.attention.channels() != c {
            return Err(Error::shape("attention width must equal C"));
        }
        self.aspp.validate(c)
    }
}

/// 3×3×3 convolution of the local volume.
pub fn refine_local(vol: &Volume, w: &FusionWeights) -> Result<Volume> {
    w.conv3d.forward(vol)
}

/// 3×3 convolution, residual window attention, then bottleneck ASPP.
pub fn refine_global(bev: &BevFeature, w: &FusionWeights) -> Result<BevFeature> {
    let mut y = w.conv2d.forward(bev)?;
    let attended = w.attention.forward(&y)?;
    for (o, a) in y.data_mut().iter_mut().zip(attended.data()) {
        *o += *a;
    }
    w.aspp.forward(&y)
}

/// Per-voxel attention gate `σ(FFN(x))`, channel-major like `x`.
pub fn gate(refined_local: &Volume, w: &FusionWeights) -> Vec<f64> {
    let n = refined_local.num_voxels();
    let mut hidden = w.ffn_in.apply(refined_local.data(), n);
    for h in hidden.iter_mut() {
        *h = h.max(0.0);
    }
    let logits = w.ffn_out.apply(&hidden, n);
    logits.iter().map(|&v| sigmoid(v as f64)).collect()
}

/// Replicates a BEV plane across `z` layers.
pub fn broadcast_z(bev: &BevFeature, z: usize) -> Volume {
    let [dx, dy] = bev.dims();
    let mut data = Vec::with_capacity(bev.data().len() * z);
    for &v in bev.data() {
        data.extend(core::iter::repeat(v).take(z));
    }
    Volume::new(bev.channels(), [dx, dy, z], data).expect("broadcast shape")
}

/// `refine_local(local) + σ(FFN(refine_local(local))) ⊙ expand_z(refine_global(global))`.
pub fn fuse(local: &Volume, global: &BevFeature, w: &FusionWeights) -> Result<Volume> {
    w.validate()?;
    let [x, y, z] = local.dims();
    if global.dims() != [x, y] || global.channels() != local.channels() {
        return Err(Error::shape(alloc::format!(
            "local is {}x{:?} but global is {}x{:?}",
            local.channels(),
            local.dims(),
            global.channels(),
            global.dims()
        )));
    }
    if local.channels() != w.channels() {
        return Err(Error::shape("feature channels differ from fusion weights"));
    }
    let refined = refine_local(local, w)?;
    let g = refine_global(global, w)?;
    let gates = gate(&refined, w);
    let mut out = refined;
    let (c, plane) = (out.channels(), x * y);
    let data = out.data_mut();
    for ch in 0..c {
        for cell in 0..plane {
            let gv = g.data()[ch * plane + cell] as f64;
            for iz in 0..z {
                let idx = (ch * plane + cell) * z + iz;
                data[idx] = (data[idx] as f64 + gates[idx] * gv) as f32;
            }
        }
    }
    Ok(out)
}

/// How a coarser volume is brought to the finer grid.
#[derive(Debug, Clone, Copy)]
pub enum Upsample<'a> {
    /// Nearest-neighbour ×2.
    Nearest,
    Deconv(&'a Deconv3d),
}

/// Upsamples `coarse` ×2 onto `fine`'s grid and adds it to `fine`.
pub fn upsample_skip(coarse: &Volume, fine: &Volume, mode: Upsample<'_>) -> Result<Volume> {
    let fd = fine.dims();
    if coarse.dims() != fd.map(halve) || coarse.channels() != fine.channels() {
        return Err(Error::shape(alloc::format!(
            "coarse {}x{:?} is not the halving of fine {}x{:?}",
            coarse.channels(),
            coarse.dims(),
            fine.channels(),
            fd
        )));
    }
    let up = match mode {
        Upsample::Deconv(d) => d.forward(coarse, fd)?,
        Upsample::Nearest => {
            let cd = coarse.dims();
            let mut data = vec![0f32; fine.data().len()];
            for c in 0..fine.channels() {
                for x in 0..fd[0].min(2 * cd[0]) {
                    for y in 0..fd[1].min(2 * cd[1]) {
                        for z in 0..fd[2].min(2 * cd[2]) {
                            data[fine.offset(c, x, y, z)] = coarse.get(c, x / 2, y / 2, z / 2);
                        }
                    }
                }
            }
            Volume::new(fine.channels(), fd, data)?
        }
    };
    if up.channels() != fine.channels() {
        return Err(Error::shape("upsampling changed the channel count"));
    }
    let mut out = up;
    for (o, f) in out.data_mut().iter_mut().zip(fine.data()) {
        *o += *f;
    }
    Ok(out)
}
