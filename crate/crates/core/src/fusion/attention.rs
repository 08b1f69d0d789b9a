//! Non-overlapping window multi-head self-attention on a BEV plane.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::Linear;
use crate::tensor::BevFeature;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttention {
    pub heads: usize,
    pub window: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl WindowAttention {
    pub fn zeros(channels: usize, heads: usize, window: usize) -> Self {
        WindowAttention {
            heads,
            window,
            query: Linear::zeros(channels, channels),
            key: Linear::zeros(channels, channels),
            value: Linear::zeros(channels, channels),
            output: Linear::zeros(channels, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.query.in_dim
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.heads == 0 || c % self.heads != 0 {
            return Err(Error::invalid(alloc::format!("{} heads do not divide {c} channels", self.heads)));
        }
        if self.window == 0 {
            return Err(Error::invalid("attention window must be at least 1"));
        }
        for (name, l) in [("query", &self.query), ("key", &self.key), ("value", &self.value), ("output", &self.output)]
        {
            l.validate(name)?;
            if l.in_dim != c || l.out_dim != c {
                return Err(Error::shape(alloc::format!("attention {name} must be {c}x{c}")));
            }
        }
        Ok(())
    }

    /// Attention output (without residual). The plane is zero-padded up to a
    /// multiple of the window, attended per window, and cropped back.
    pub fn forward(&self, x: &BevFeature) -> Result<BevFeature> {
        Ok(self.run(x, false)?.0)
    }

    /// Softmax weights per window (row-major over windows), then per head,
    /// as `w² × w²` row-major matrices.
    pub fn probabilities(&self, x: &BevFeature) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(self.run(x, true)?.1)
    }

    fn run(&self, x: &BevFeature, keep_probs: bool) -> Result<(BevFeature, Vec<Vec<Vec<f64>>>)> {
        self.validate()?;
        let c = self.channels();
        if x.channels() != c {
            return Err(Error::shape(alloc::format!("attention expects {c} channels, got {}", x.channels())));
        }
        let [dx, dy] = x.dims();
        let w = self.window;
        let (wx, wy) = (dx.div_ceil(w), dy.div_ceil(w));
        let positions = w * w;
        let head_dim = c / self.heads;
        let scale = 1.0 / libm::sqrt(head_dim as f64);

        let windows: Vec<(Vec<(usize, Vec<f32>)>, Vec<Vec<f64>>)> = crate::par::map_collect(wx * wy, |win| {
            let (bx, by) = ((win / wy) * w, (win % wy) * w);
            // tokens, channel-major: padded positions stay zero
            let mut tokens = vec![0f32; c * positions];
            for p in 0..positions {
                let (px, py) = (bx + p / w, by + p % w);
                if px < dx && py < dy {
                    for ch in 0..c {
                        tokens[ch * positions + p] = x.get(ch, px, py);
                    }
                }
            }
            let q = self.query.apply(&tokens, positions);
            let k = self.key.apply(&tokens, positions);
            let v = self.value.apply(&tokens, positions);
            let mut mixed = vec![0f32; c * positions];
            let mut probs = Vec::new();
            for h in 0..self.heads {
                let chans = h * head_dim..(h + 1) * head_dim;
                let mut head_probs = if keep_probs { vec![0f64; positions * positions] } else { Vec::new() };
                let mut row = vec![0f64; positions];
                for i in 0..positions {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = chans
                            .clone()
                            .map(|ch| q[ch * positions + i] as f64 * k[ch * positions + j] as f64)
                            .sum::<f64>()
                            * scale;
                    }
                    softmax_in_place(&mut row);
                    for ch in chans.clone() {
                        let s: f64 = row.iter().enumerate().map(|(j, a)| a * v[ch * positions + j] as f64).sum();
                        mixed[ch * positions + i] = s as f32;
                    }
                    if keep_probs {
                        head_probs[i * positions..(i + 1) * positions].copy_from_slice(&row);
                    }
                }
                if keep_probs {
                    probs.push(head_probs);
                }
            }
            let projected = self.output.apply(&mixed, positions);
            let mut cells = Vec::new();
            for p in 0..positions {
                let (px, py) = (bx + p / w, by + p % w);
                if px < dx && py < dy {
                    cells.push((px * dy + py, (0..c).map(|ch| projected[ch * positions + p]).collect()));
                }
            }
            (cells, probs)
        });

        let mut out = BevFeature::zeros(c, [dx, dy]);
        let plane = dx * dy;
        let mut all_probs = Vec::new();
        for (cells, probs) in windows {
            for (cell, vals) in cells {
                for (ch, v) in vals.into_iter().enumerate() {
                    out.data_mut()[ch * plane + cell] = v;
                }
            }
            if keep_probs {
                all_probs.push(probs);
            }
        }
        Ok((out, all_probs))
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = libm::exp(*r - max);
        sum += *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_attention() -> WindowAttention {
        let one = Linear { in_dim: 1, out_dim: 1, weight: vec![1.0], bias: vec![0.0] };
        WindowAttention { heads: 1, window: 2, query: one.clone(), key: one.clone(), value: one.clone(), output: one }
    }

    #[test]
    fn hand_softmax_two_by_two() {
        let xs = [1.0f32, 0.5, -1.0, 2.0];
        let bev = BevFeature::new(1, [2, 2], xs.to_vec()).unwrap();
        let out = unit_attention().forward(&bev).unwrap();
        // token order inside the window is (0,0), (0,1), (1,0), (1,1) = data order
        for i in 0..4 {
            let scores: Vec<f64> = xs.iter().map(|&xj| (xs[i] * xj) as f64).collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let expected: f64 = scores.iter().zip(&xs).map(|(s, &xj)| s.exp() / z * xj as f64).sum();
            assert!((out.data()[i] as f64 - expected).abs() < 1e-6, "{i}");
        }
        // position 0: scores (1, .5, -1, 2)
        let e = [1.0f64.exp(), 0.5f64.exp(), (-1.0f64).exp(), 2.0f64.exp()];
        let hand = (e[0] * 1.0 + e[1] * 0.5 - e[2] + e[3] * 2.0) / e.iter().sum::<f64>();
        assert!((out.data()[0] as f64 - hand).abs() < 1e-6);
    }

    #[test]
    fn padding_preserves_shape() {
        let mut attn = WindowAttention::zeros(4, 2, 2);
        attn.value = Linear::identity(4, 4);
        attn.output = Linear::identity(4, 4);
        let bev = BevFeature::new(4, [5, 5], (0..100).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let out = attn.forward(&bev).unwrap();
        assert_eq!(out.dims(), [5, 5]);
        assert!(out.data().iter().all(|v| v.is_finite()));
        let probs = attn.probabilities(&bev).unwrap();
        assert_eq!(probs.len(), 9);
        assert_eq!(probs[0].len(), 2);
    }

    #[test]
    fn heads_must_divide_channels() {
        let attn = WindowAttention::zeros(6, 4, 2);
        assert!(attn.forward(&BevFeature::zeros(6, [2, 2])).is_err());
    }
}
