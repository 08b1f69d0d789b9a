//! Weight bundles: a directory holding `manifest.json` and one OVTF tensor per
//! parameter array.

use std::path::Path;

use occuvt_core::fusion::init::FFN_EXPANSION;
use occuvt_core::fusion::layers::{Conv2d, Conv3d, Deconv3d, Linear};
use occuvt_core::fusion::{Aspp, FusionWeights, LevelWeights, PipelineWeights, WindowAttention};
use occuvt_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{create_dir, read_json, read_tensor, write_json, write_tensor};

pub const MANIFEST: &str = "manifest.json";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionShape {
    pub heads: usize,
    pub window: usize,
    pub bottleneck: usize,
    pub dilations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelShape {
    pub fusion: Option<FusionShape>,
    pub upsample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub channels: usize,
    pub num_classes: usize,
    pub levels: Vec<LevelShape>,
}

impl Manifest {
    pub fn describe(w: &PipelineWeights) -> CliResult<Self> {
        let channels =
            w.levels.first().map(|l| l.head.in_dim).ok_or_else(|| CliError::input("weights have no levels"))?;
        let levels = w
            .levels
            .iter()
            .map(|l| LevelShape {
                fusion: l.fusion.as_ref().map(|f| FusionShape {
                    heads: f.attention.heads,
                    window: f.attention.window,
                    bottleneck: f.aspp.reduce.out_ch,
                    dilations: f.aspp.branches.iter().map(|b| b.dilation).collect(),
                }),
                upsample: l.upsample.is_some(),
            })
            .collect();
        Ok(Manifest { version: BUNDLE_VERSION, channels, num_classes: w.num_classes, levels })
    }

    /// Zero weights with this manifest's shapes.
    pub fn zeros(&self) -> PipelineWeights {
        let c = self.channels;
        let levels = self
            .levels
            .iter()
            .map(|l| LevelWeights {
                fusion: l.fusion.as_ref().map(|f| FusionWeights {
                    ffn_in: Linear::zeros(c, FFN_EXPANSION * c),
                    ffn_out: Linear::zeros(FFN_EXPANSION * c, c),
                    conv3d: Conv3d::zeros(c, c),
                    conv2d: Conv2d::zeros(c, c, 3, 1),
                    attention: WindowAttention::zeros(c, f.heads, f.window),
                    aspp: Aspp::zeros(c, f.bottleneck, &f.dilations),
                }),
                upsample: l.upsample.then(|| Deconv3d::zeros(c, c)),
                head: Linear::zeros(c, self.num_classes),
            })
            .collect();
        PipelineWeights { num_classes: self.num_classes, levels }
    }
}

type Slot<'a> = (String, Vec<usize>, &'a mut Vec<f32>);

fn linear_slots<'a>(prefix: &str, l: &'a mut Linear, out: &mut Vec<Slot<'a>>) {
    out.push((format!("{prefix}.weight"), vec![l.out_dim, l.in_dim], &mut l.weight));
    out.push((format!("{prefix}.bias"), vec![l.out_dim], &mut l.bias));
}

fn conv2d_slot<'a>(prefix: &str, c: &'a mut Conv2d, out: &mut Vec<Slot<'a>>) {
    out.push((format!("{prefix}.weight"), vec![c.out_ch, c.in_ch, c.kernel, c.kernel], &mut c.weight));
}

/// Every parameter array with its file stem and shape, in a fixed order.
fn slots(w: &mut PipelineWeights) -> Vec<Slot<'_>> {
    let mut out = Vec::new();
    for (i, l) in w.levels.iter_mut().enumerate() {
        let p = format!("level{i}");
        if let Some(f) = l.fusion.as_mut() {
            linear_slots(&format!("{p}.ffn_in"), &mut f.ffn_in, &mut out);
            linear_slots(&format!("{p}.ffn_out"), &mut f.ffn_out, &mut out);
            let c3 = &mut f.conv3d;
            out.push((format!("{p}.conv3d.weight"), vec![c3.out_ch, c3.in_ch, 3, 3, 3], &mut c3.weight));
            conv2d_slot(&format!("{p}.conv2d"), &mut f.conv2d, &mut out);
            let a = &mut f.attention;
            linear_slots(&format!("{p}.attention.query"), &mut a.query, &mut out);
            linear_slots(&format!("{p}.attention.key"), &mut a.key, &mut out);
            linear_slots(&format!("{p}.attention.value"), &mut a.value, &mut out);
            linear_slots(&format!("{p}.attention.output"), &mut a.output, &mut out);
            conv2d_slot(&format!("{p}.aspp.reduce"), &mut f.aspp.reduce, &mut out);
            for (k, b) in f.aspp.branches.iter_mut().enumerate() {
                conv2d_slot(&format!("{p}.aspp.branch{k}"), b, &mut out);
            }
            conv2d_slot(&format!("{p}.aspp.restore"), &mut f.aspp.restore, &mut out);
        }
        if let Some(d) = l.upsample.as_mut() {
            out.push((format!("{p}.upsample.weight"), vec![d.out_ch, d.in_ch, 2, 2, 2], &mut d.weight));
        }
        linear_slots(&format!("{p}.head"), &mut l.head, &mut out);
    }
    out
}

pub fn save_bundle(dir: &Path, w: &PipelineWeights) -> CliResult<()> {
    create_dir(dir)?;
    let manifest = Manifest::describe(w)?;
    let mut copy = w.clone();
    for (name, dims, data) in slots(&mut copy) {
        let t = Tensor::f32(dims, std::mem::take(data))?;
        write_tensor(&dir.join(format!("{name}.ovtf")), &t)?;
    }
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_bundle(dir: &Path) -> CliResult<PipelineWeights> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.version != BUNDLE_VERSION {
        return Err(CliError::input(format!("unsupported weight bundle version {}", manifest.version)));
    }
    let mut w = manifest.zeros();
    for (name, dims, data) in slots(&mut w) {
        let t = read_tensor(&dir.join(format!("{name}.ovtf")))?;
        if t.dims != dims {
            return Err(CliError::Shape(format!("{name}: expected {dims:?}, found {:?}", t.dims)));
        }
        *data = t.into_f32()?;
    }
    Ok(w)
}
