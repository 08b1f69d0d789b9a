//! Forward-only convolution and affine layers over channel-major buffers.
//!
//! All sums accumulate in `f64` in a fixed order; each output channel is
//! produced by one task, so results do not depend on thread count.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{BevFeature, Volume};
use crate::{Error, Result};

/// Per-position affine map `y = W·x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Identity on the first `min(in, out)` channels.
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        let mut l = Linear::zeros(in_dim, out_dim);
        for i in 0..in_dim.min(out_dim) {
            l.weight[i * in_dim + i] = 1.0;
        }
        l
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(Error::shape(alloc::format!("{name}: weight/bias sizes disagree with dims")));
        }
        check_finite(name, &self.weight)?;
        check_finite(name, &self.bias)
    }

    /// Applies the map to every position of a channel-major buffer with
    /// `positions` entries per channel.
    pub fn apply(&self, input: &[f32], positions: usize) -> Vec<f32> {
        debug_assert_eq!(input.len(), self.in_dim * positions);
        let mut out = vec![0f32; self.out_dim * positions];
        crate::par::for_each_chunk_mut(&mut out, positions.max(1), |o, out_ch| {
            let mut acc = vec![self.bias[o] as f64; positions];
            for i in 0..self.in_dim {
                let w = self.weight[o * self.in_dim + i] as f64;
                if w == 0.0 {
                    continue;
                }
                let src = &input[i * positions..(i + 1) * positions];
                for (a, &x) in acc.iter_mut().zip(src) {
                    *a += w * x as f64;
                }
            }
            for (d, a) in out_ch.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        });
        out
    }
}

/// 3×3×3 convolution, stride 1, zero "same" padding, no bias.
/// Weight layout `out × in × 3 × 3 × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f32>,
}

impl Conv3d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv3d { in_ch, out_ch, weight: vec![0.0; in_ch * out_ch * 27] }
    }

    /// Centre tap 1 on matching channels.
    pub fn identity(ch: usize) -> Self {
        let mut c = Conv3d::zeros(ch, ch);
        for i in 0..ch {
            c.weight[(i * ch + i) * 27 + 13] = 1.0;
        }
        c
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.in_ch * self.out_ch * 27 {
            return Err(Error::shape(alloc::format!("{name}: kernel size disagrees with channels")));
        }
        check_finite(name, &self.weight)
    }

    pub fn forward(&self, x: &Volume) -> Result<Volume> {
        if x.channels() != self.in_ch {
            return Err(Error::shape(alloc::format!("conv3d expects {} channels, got {}", self.in_ch, x.channels())));
        }
        let [dx, dy, dz] = x.dims();
        let n = dx * dy * dz;
        let mut out = vec![0f32; self.out_ch * n];
        crate::par::for_each_chunk_mut(&mut out, n.max(1), |o, out_ch| {
            let mut acc = vec![0f64; n];
            for i in 0..self.in_ch {
                let src = x.channel(i);
                for k in 0..27 {
                    let w = self.weight[(o * self.in_ch + i) * 27 + k] as f64;
                    if w == 0.0 {
                        continue;
                    }
                    let (ox, oy, oz) = ((k / 9) as isize - 1, ((k / 3) % 3) as isize - 1, (k % 3) as isize - 1);
                    for xi in span(dx, ox) {
                        let sx = (xi as isize + ox) as usize;
                        for yi in span(dy, oy) {
                            let sy = (yi as isize + oy) as usize;
                            let zr = span(dz, oz);
                            let dst = (xi * dy + yi) * dz;
                            let srow = (sx * dy + sy) * dz;
                            for zi in zr {
                                let sz = (zi as isize + oz) as usize;
                                acc[dst + zi] += w * src[srow + sz] as f64;
                            }
                        }
                    }
                }
            }
            for (d, a) in out_ch.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        });
        Volume::new(self.out_ch, x.dims(), out)
    }
}

/// Output positions `i` in `0..len` whose source `i + offset` is in range.
#[inline]
fn span(len: usize, offset: isize) -> core::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(0) as usize;
    lo.min(hi)..hi
}

/// 2D convolution with odd square kernel and dilation, zero "same" padding,
/// no bias. Weight layout `out × in × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        Conv2d { in_ch, out_ch, kernel, dilation, weight: vec![0.0; in_ch * out_ch * kernel * kernel] }
    }

    pub fn identity(ch: usize, kernel: usize) -> Self {
        let mut c = Conv2d::zeros(ch, ch, kernel, 1);
        let centre = (kernel / 2) * kernel + kernel / 2;
        for i in 0..ch {
            c.weight[(i * ch + i) * kernel * kernel + centre] = 1.0;
        }
        c
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.kernel % 2 == 0 || self.dilation == 0 {
            return Err(Error::invalid(alloc::format!("{name}: kernel must be odd and dilation positive")));
        }
        if self.weight.len() != self.in_ch * self.out_ch * self.kernel * self.kernel {
            return Err(Error::shape(alloc::format!("{name}: kernel size disagrees with channels")));
        }
        check_finite(name, &self.weight)
    }

    pub fn forward(&self, x: &BevFeature) -> Result<BevFeature> {
        if x.channels() != self.in_ch {
            return Err(Error::shape(alloc::format!("conv2d expects {} channels, got {}", self.in_ch, x.channels())));
        }
        let [dx, dy] = x.dims();
        let n = dx * dy;
        let k = self.kernel;
        let half = (k / 2) as isize;
        let mut out = vec![0f32; self.out_ch * n];
        crate::par::for_each_chunk_mut(&mut out, n.max(1), |o, out_ch| {
            let mut acc = vec![0f64; n];
            for i in 0..self.in_ch {
                let src = &x.data()[i * n..(i + 1) * n];
                for t in 0..k * k {
                    let w = self.weight[(o * self.in_ch + i) * k * k + t] as f64;
                    if w == 0.0 {
                        continue;
                    }
                    let ox = ((t / k) as isize - half) * self.dilation as isize;
                    let oy = ((t % k) as isize - half) * self.dilation as isize;
                    for xi in span(dx, ox) {
                        let sx = (xi as isize + ox) as usize;
                        for yi in span(dy, oy) {
                            let sy = (yi as isize + oy) as usize;
                            acc[xi * dy + yi] += w * src[sx * dy + sy] as f64;
                        }
                    }
                }
            }
            for (d, a) in out_ch.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        });
        BevFeature::new(self.out_ch, x.dims(), out)
    }
}

/// Stride-2 transposed 3D convolution with a 2×2×2 kernel, no bias.
/// Weight layout `out × in × 2 × 2 × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv3d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f32>,
}

impl Deconv3d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Deconv3d { in_ch, out_ch, weight: vec![0.0; in_ch * out_ch * 8] }
    }

    /// Unit impulse at every kernel tap on matching channels; equals nearest ×2.
    pub fn nearest(ch: usize) -> Self {
        let mut d = Deconv3d::zeros(ch, ch);
        for i in 0..ch {
            for t in 0..8 {
                d.weight[(i * ch + i) * 8 + t] = 1.0;
            }
        }
        d
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.in_ch * self.out_ch * 8 {
            return Err(Error::shape(alloc::format!("{name}: kernel size disagrees with channels")));
        }
        check_finite(name, &self.weight)
    }

    /// Upsamples to `out_dims`; output positions past `2 × input` stay zero.
    pub fn forward(&self, x: &Volume, out_dims: [usize; 3]) -> Result<Volume> {
        if x.channels() != self.in_ch {
            return Err(Error::shape("deconv3d channel mismatch"));
        }
        let [cx, cy, cz] = x.dims();
        let [fx, fy, fz] = out_dims;
        let n = fx * fy * fz;
        let mut out = vec![0f32; self.out_ch * n];
        crate::par::for_each_chunk_mut(&mut out, n.max(1), |o, out_ch| {
            let mut acc = vec![0f64; n];
            for i in 0..self.in_ch {
                let src = x.channel(i);
                let taps = &self.weight[(o * self.in_ch + i) * 8..(o * self.in_ch + i + 1) * 8];
                if taps.iter().all(|&w| w == 0.0) {
                    continue;
                }
                for xo in 0..fx.min(2 * cx) {
                    for yo in 0..fy.min(2 * cy) {
                        for zo in 0..fz.min(2 * cz) {
                            let t = (xo % 2) * 4 + (yo % 2) * 2 + zo % 2;
                            let s = src[((xo / 2) * cy + yo / 2) * cz + zo / 2] as f64;
                            acc[(xo * fy + yo) * fz + zo] += taps[t] as f64 * s;
                        }
                    }
                }
            }
            for (d, a) in out_ch.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        });
        Volume::new(self.out_ch, out_dims, out)
    }
}

pub(crate) fn check_finite(name: &str, v: &[f32]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("{name}: weights must be finite")))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of a same-padded 3×3×3 convolution.
    fn naive_conv3d(conv: &Conv3d, x: &Volume) -> Vec<f64> {
        let [dx, dy, dz] = x.dims();
        let mut out = vec![0f64; conv.out_ch * dx * dy * dz];
        for o in 0..conv.out_ch {
            for px in 0..dx as isize {
                for py in 0..dy as isize {
                    for pz in 0..dz as isize {
                        let mut s = 0.0;
                        for i in 0..conv.in_ch {
                            for a in 0..3isize {
                                for b in 0..3isize {
                                    for c in 0..3isize {
                                        let (sx, sy, sz) = (px + a - 1, py + b - 1, pz + c - 1);
                                        if sx < 0
                                            || sy < 0
                                            || sz < 0
                                            || sx >= dx as isize
                                            || sy >= dy as isize
                                            || sz >= dz as isize
                                        {
                                            continue;
                                        }
                                        let w = conv.weight[(o * conv.in_ch + i) * 27 + (a * 9 + b * 3 + c) as usize];
                                        s += w as f64 * x.get(i, sx as usize, sy as usize, sz as usize) as f64;
                                    }
                                }
                            }
                        }
                        out[((o * dx + px as usize) * dy + py as usize) * dz + pz as usize] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        (0..n).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 500.0 - 1.0).collect()
    }

    #[test]
    fn conv3d_identity_and_zero() {
        let x = Volume::new(2, [3, 2, 4], pseudo(48, 1)).unwrap();
        assert_eq!(Conv3d::identity(2).forward(&x).unwrap(), x);
        assert!(Conv3d::zeros(2, 2).forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3d_matches_direct_definition() {
        let x = Volume::new(1, [2, 2, 2], pseudo(8, 3)).unwrap();
        let conv = Conv3d { in_ch: 1, out_ch: 1, weight: pseudo(27, 7) };
        let got = conv.forward(&x).unwrap();
        for (g, e) in got.data().iter().zip(naive_conv3d(&conv, &x)) {
            assert!((*g as f64 - e).abs() < 1e-6);
        }
        let x = Volume::new(2, [3, 4, 2], pseudo(48, 5)).unwrap();
        let conv = Conv3d { in_ch: 2, out_ch: 3, weight: pseudo(2 * 3 * 27, 11) };
        let got = conv.forward(&x).unwrap();
        for (g, e) in got.data().iter().zip(naive_conv3d(&conv, &x)) {
            assert!((*g as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn conv2d_dilated_direct() {
        let x = BevFeature::new(1, [5, 4], pseudo(20, 2)).unwrap();
        let conv = Conv2d { in_ch: 1, out_ch: 1, kernel: 3, dilation: 2, weight: pseudo(9, 9) };
        let got = conv.forward(&x).unwrap();
        for px in 0..5isize {
            for py in 0..4isize {
                let mut s = 0.0f64;
                for a in 0..3isize {
                    for b in 0..3isize {
                        let (sx, sy) = (px + 2 * (a - 1), py + 2 * (b - 1));
                        if sx >= 0 && sy >= 0 && sx < 5 && sy < 4 {
                            s += conv.weight[(a * 3 + b) as usize] as f64 * x.get(0, sx as usize, sy as usize) as f64;
                        }
                    }
                }
                assert!((got.get(0, px as usize, py as usize) as f64 - s).abs() < 1e-6);
            }
        }
        assert_eq!(Conv2d::identity(1, 3).forward(&x).unwrap(), x);
    }

    #[test]
    fn deconv_impulse_is_nearest() {
        let x = Volume::new(2, [2, 1, 3], pseudo(12, 4)).unwrap();
        let up = Deconv3d::nearest(2).forward(&x, [4, 2, 6]).unwrap();
        for c in 0..2 {
            for a in 0..4 {
                for b in 0..2 {
                    for z in 0..6 {
                        assert_eq!(up.get(c, a, b, z), x.get(c, a / 2, b / 2, z / 2));
                    }
                }
            }
        }
        // odd fine dims: the trailing slab has no source
        let up = Deconv3d::nearest(2).forward(&x, [5, 1, 6]).unwrap();
        assert_eq!(up.get(0, 4, 0, 0), 0.0);
        assert_eq!(up.get(0, 0, 0, 0), x.get(0, 0, 0, 0));
    }

    #[test]
    fn linear_pointwise() {
        let l = Linear { in_dim: 2, out_dim: 1, weight: vec![2.0, -1.0], bias: vec![0.5] };
        let out = l.apply(&[1.0, 2.0, 3.0, 5.0], 2);
        assert_eq!(out, vec![2.0 - 3.0 + 0.5, 4.0 - 5.0 + 0.5]);
    }

    #[test]
    fn sigmoid_bounds() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1e4) < 1e-300);
        assert!(sigmoid(30.0) < 1.0);
    }
}
