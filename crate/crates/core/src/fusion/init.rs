//! Weight construction: seeded random initialisation and analytic routing weights.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{Conv2d, Conv3d, Deconv3d, Linear};
use super::pipeline::{LevelWeights, PipelineWeights};
use super::{Aspp, FusionWeights, WindowAttention};
use crate::grid::PyramidConfig;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_DILATIONS: [usize; 3] = [1, 2, 3];
pub const BOTTLENECK_FACTOR: usize = 4;
pub const FFN_EXPANSION: usize = 2;
pub const INIT_STD: f32 = 0.02;
/// FFN output bias that drives the gate to zero.
pub const CLOSED_GATE_BIAS: f32 = -1e4;

/// `DEFAULT_HEADS` when it divides `channels`, otherwise one head.
pub fn heads_for(channels: usize) -> usize {
    if channels % DEFAULT_HEADS == 0 {
        DEFAULT_HEADS
    } else {
        1
    }
}

pub fn bottleneck_width(channels: usize) -> usize {
    (channels / BOTTLENECK_FACTOR).max(1)
}

struct Filler {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl Filler {
    fn new(seed: u64) -> Self {
        Filler { rng: ChaCha8Rng::seed_from_u64(seed), normal: Normal::new(0.0, INIT_STD).expect("valid std") }
    }

    fn fill(&mut self, v: &mut [f32]) {
        for x in v.iter_mut() {
            *x = self.normal.sample(&mut self.rng);
        }
    }

    fn linear(&mut self, i: usize, o: usize) -> Linear {
        let mut l = Linear::zeros(i, o);
        self.fill(&mut l.weight);
        l
    }
}

fn fusion_from(f: &mut Filler, c: usize, heads: usize, window: usize, dilations: &[usize]) -> FusionWeights {
    let hidden = FFN_EXPANSION * c;
    let ffn_in = f.linear(c, hidden);
    let ffn_out = f.linear(hidden, c);
    let mut conv3d = Conv3d::zeros(c, c);
    f.fill(&mut conv3d.weight);
    let mut conv2d = Conv2d::zeros(c, c, 3, 1);
    f.fill(&mut conv2d.weight);
    let attention = WindowAttention {
        heads,
        window,
        query: f.linear(c, c),
        key: f.linear(c, c),
        value: f.linear(c, c),
        output: f.linear(c, c),
    };
    let mut aspp = Aspp::zeros(c, bottleneck_width(c), dilations);
    f.fill(&mut aspp.reduce.weight);
    for b in aspp.branches.iter_mut() {
        f.fill(&mut b.weight);
    }
    f.fill(&mut aspp.restore.weight);
    FusionWeights { ffn_in, ffn_out, conv3d, conv2d, attention, aspp }
}

/// Normal(0, 0.02) weights and zero biases for one fusion block.
pub fn seeded_fusion(channels: usize, heads: usize, window: usize, dilations: &[usize], seed: u64) -> FusionWeights {
    fusion_from(&mut Filler::new(seed), channels, heads, window, dilations)
}

/// Identity refiners, inert attention and ASPP, FFN zero except for a
/// constant output bias. With `ffn_bias = CLOSED_GATE_BIAS` the gate is shut
/// and fusion returns the local volume unchanged.
pub fn routing_fusion(channels: usize, ffn_bias: f32) -> FusionWeights {
    let c = channels;
    let mut ffn_out = Linear::zeros(FFN_EXPANSION * c, c);
    ffn_out.bias.iter_mut().for_each(|b| *b = ffn_bias);
    FusionWeights {
        ffn_in: Linear::zeros(c, FFN_EXPANSION * c),
        ffn_out,
        conv3d: Conv3d::identity(c),
        conv2d: Conv2d::identity(c, 3),
        attention: WindowAttention::zeros(c, heads_for(c), DEFAULT_WINDOW),
        aspp: Aspp::zeros(c, bottleneck_width(c), &DEFAULT_DILATIONS),
    }
}

/// Seeded weights for every level of a pyramid.
pub fn seeded_weights(pyramid: &PyramidConfig, num_classes: usize, seed: u64) -> PipelineWeights {
    let mut f = Filler::new(seed);
    let c = pyramid.channels();
    let levels = pyramid
        .levels
        .iter()
        .map(|l| {
            let fusion = l.sampling.map(|_| fusion_from(&mut f, c, heads_for(c), DEFAULT_WINDOW, &DEFAULT_DILATIONS));
            let upsample = (l.level > 0).then(|| {
                let mut d = Deconv3d::zeros(c, c);
                f.fill(&mut d.weight);
                d
            });
            let head = f.linear(c, num_classes);
            LevelWeights { fusion, upsample, head }
        })
        .collect::<Vec<_>>();
    PipelineWeights { num_classes, levels }
}

/// Weights under which the pipeline reduces to the plain lifted features:
/// closed gates, identity refiners, nearest upsampling and an identity class
/// head on the first `num_classes` channels.
pub fn routing_weights(pyramid: &PyramidConfig, num_classes: usize) -> PipelineWeights {
    let c = pyramid.channels();
    let levels = pyramid
        .levels
        .iter()
        .map(|l| LevelWeights {
            fusion: l.sampling.map(|_| routing_fusion(c, CLOSED_GATE_BIAS)),
            upsample: (l.level > 0).then(|| Deconv3d::nearest(c)),
            head: Linear::identity(c, num_classes),
        })
        .collect();
    PipelineWeights { num_classes, levels }
}
