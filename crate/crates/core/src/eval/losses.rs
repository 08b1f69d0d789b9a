//! Focal, Lovász-softmax and scene-class affinity losses with multi-level
//! decayed weighting.
//!
//! Score volumes are channel-major: class `k` of voxel `i` sits at `k·n + i`.

use alloc::vec;
use alloc::vec::Vec;

use super::LabelVolume;
use crate::grid::halve;
use crate::tensor::Volume;
use crate::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;
const SIMPLEX_TOL: f64 = 1e-5;

fn check_pair(scores: &Volume, gt: &LabelVolume) -> Result<()> {
    if scores.dims() != gt.dims() {
        return Err(Error::shape(alloc::format!("scores {:?} and labels {:?} differ", scores.dims(), gt.dims())));
    }
    if let Some(&l) = gt.labels().iter().find(|&&l| l as usize >= scores.channels()) {
        return Err(Error::invalid(alloc::format!("label {l} has no score channel")));
    }
    Ok(())
}

/// Per-voxel softmax over classes.
pub fn softmax(logits: &Volume) -> Volume {
    let n = logits.num_voxels();
    let c = logits.channels();
    let d = logits.data();
    let mut out = vec![0f32; d.len()];
    let mut row = vec![0f64; c];
    for i in 0..n {
        for (k, r) in row.iter_mut().enumerate() {
            *r = d[k * n + i] as f64;
        }
        crate::fusion::attention::softmax_in_place(&mut row);
        for (k, r) in row.iter().enumerate() {
            out[k * n + i] = *r as f32;
        }
    }
    Volume::new(c, logits.dims(), out).expect("same shape")
}

/// Mean over voxels of `−α (1 − p_t)^γ ln p_t`, `p_t` the softmax probability
/// of the true class clamped to `[ε, 1 − ε]`.
pub fn focal_loss(logits: &Volume, gt: &LabelVolume, gamma: f64, alpha: f64) -> Result<f64> {
    check_pair(logits, gt)?;
    let n = logits.num_voxels();
    if n == 0 {
        return Ok(0.0);
    }
    let c = logits.channels();
    let d = logits.data();
    let mut total = 0.0;
    for (i, &t) in gt.labels().iter().enumerate() {
        let max = (0..c).map(|k| d[k * n + i] as f64).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..c).map(|k| libm::exp(d[k * n + i] as f64 - max)).sum();
        let pt = (libm::exp(d[t as usize * n + i] as f64 - max) / z).clamp(PROB_EPS, 1.0 - PROB_EPS);
        total += -alpha * libm::pow(1.0 - pt, gamma) * libm::log(pt);
    }
    Ok(total / n as f64)
}

fn check_simplex(probs: &Volume) -> Result<()> {
    let n = probs.num_voxels();
    let d = probs.data();
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..probs.channels() {
            let p = d[k * n + i] as f64;
            if !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p) {
                return Err(Error::invalid(alloc::format!("voxel {i} has probability {p}")));
            }
            s += p;
        }
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(alloc::format!("voxel {i} probabilities sum to {s}")));
        }
    }
    Ok(())
}

/// Lovász extension of the Jaccard loss over each class present in `gt`,
/// averaged. Errors are sorted descending with ties broken by voxel index.
pub fn lovasz_softmax(probs: &Volume, gt: &LabelVolume) -> Result<f64> {
    check_pair(probs, gt)?;
    check_simplex(probs)?;
    let n = probs.num_voxels();
    let d = probs.data();
    let mut losses = Vec::new();
    let mut errors: Vec<(f64, bool)> = Vec::with_capacity(n);
    for c in 0..probs.channels() {
        let gts = gt.labels().iter().filter(|&&l| l as usize == c).count();
        if gts == 0 {
            continue;
        }
        errors.clear();
        errors.extend(gt.labels().iter().enumerate().map(|(i, &l)| {
            let fg = l as usize == c;
            let p = d[c * n + i] as f64;
            ((if fg { 1.0 - p } else { p }).abs(), fg)
        }));
        // stable sort keeps index order among equal errors
        errors.sort_by(|a, b| b.0.total_cmp(&a.0));
        let gts = gts as f64;
        let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
        let mut prev = 0.0;
        let mut loss = 0.0;
        for &(e, fg) in &errors {
            if fg {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            loss += e * (jaccard - prev);
            prev = jaccard;
        }
        losses.push(loss);
    }
    if losses.is_empty() {
        return Ok(0.0);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalKind {
    /// Occupied (any class ≠ 0) versus empty.
    Geometric,
    /// Each semantic class 1.. separately, averaged.
    Semantic,
}

/// Soft precision/recall/specificity affinity of one binary problem; the mean
/// of `−ln` over the terms that are defined. `None` when no term is.
fn affinity(p: impl Iterator<Item = f64> + Clone, t: impl Iterator<Item = bool> + Clone) -> Option<f64> {
    let (mut sp, mut st, mut tp, mut neg, mut tn) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, t) in p.zip(t) {
        sp += p;
        if t {
            st += 1.0;
            tp += p;
        } else {
            neg += 1.0;
            tn += 1.0 - p;
        }
    }
    let nlog = |x: f64| -libm::log(x.max(PROB_EPS));
    let mut terms = Vec::with_capacity(3);
    if st > 0.0 {
        if sp > 0.0 {
            terms.push(nlog(tp / sp));
        }
        terms.push(nlog(tp / st));
    }
    if neg > 0.0 {
        terms.push(nlog(tn / neg));
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn scal_loss(probs: &Volume, gt: &LabelVolume, kind: ScalKind) -> Result<f64> {
    check_pair(probs, gt)?;
    let n = probs.num_voxels();
    let d = probs.data();
    let labels = gt.labels();
    match kind {
        ScalKind::Geometric => {
            let occ = (0..n).map(|i| 1.0 - d[i] as f64);
            let t = labels.iter().map(|&l| l != 0);
            Ok(affinity(occ, t).unwrap_or(0.0))
        }
        ScalKind::Semantic => {
            let per_class: Vec<f64> = (1..probs.channels())
                .filter_map(|c| {
                    let p = d[c * n..(c + 1) * n].iter().map(|&v| v as f64);
                    let t = labels.iter().map(move |&l| l as usize == c);
                    affinity(p, t)
                })
                .collect();
            if per_class.is_empty() {
                return Ok(0.0);
            }
            Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub focal: f64,
    pub lovasz: f64,
    pub scal_geo: f64,
    pub scal_sem: f64,
}

impl LossTerms {
    pub fn sum(&self) -> f64 {
        self.focal + self.lovasz + self.scal_geo + self.scal_sem
    }
}

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 1.0;
pub const DEFAULT_DECAY: f64 = 0.5;

/// The four unweighted terms at one level.
pub fn level_loss(logits: &Volume, gt: &LabelVolume) -> Result<LossTerms> {
    let probs = softmax(logits);
    Ok(LossTerms {
        focal: focal_loss(logits, gt, FOCAL_GAMMA, FOCAL_ALPHA)?,
        lovasz: lovasz_softmax(&probs, gt)?,
        scal_geo: scal_loss(&probs, gt, ScalKind::Geometric)?,
        scal_sem: scal_loss(&probs, gt, ScalKind::Semantic)?,
    })
}

/// `Σ_l decay^l · terms(l)` with level 0 the finest.
pub fn total_loss(logits: &[Volume], gt: &[LabelVolume], decay: f64) -> Result<f64> {
    if logits.len() != gt.len() {
        return Err(Error::shape("one ground-truth level per logits level is required"));
    }
    let mut total = 0.0;
    for (l, (lg, g)) in logits.iter().zip(gt).enumerate() {
        total += libm::pow(decay, l as f64) * level_loss(lg, g)?.sum();
    }
    Ok(total)
}

/// Majority label of each 2×2×2 block (ties to the lowest id). Output dims are
/// halved with floor and a minimum of 1; trailing odd slabs are dropped.
pub fn downsample_labels(gt: &LabelVolume, num_classes: usize) -> LabelVolume {
    let [fx, fy, fz] = gt.dims();
    let out_dims = gt.dims().map(halve);
    let [cx, cy, cz] = out_dims;
    let mut labels = Vec::with_capacity(cx * cy * cz);
    let mut votes = vec![0u32; num_classes];
    for x in 0..cx {
        for y in 0..cy {
            for z in 0..cz {
                votes.iter_mut().for_each(|v| *v = 0);
                for a in 2 * x..(2 * x + 2).min(fx) {
                    for b in 2 * y..(2 * y + 2).min(fy) {
                        for c in 2 * z..(2 * z + 2).min(fz) {
                            votes[gt.labels()[(a * fy + b) * fz + c] as usize] += 1;
                        }
                    }
                }
                let mut best = 0;
                for (k, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = k;
                    }
                }
                labels.push(best as u8);
            }
        }
    }
    LabelVolume::new(out_dims, labels, num_classes).expect("downsampled labels stay in range")
}

/// Ground truth for `levels` levels, finest first.
pub fn gt_pyramid(gt: &LabelVolume, levels: usize, num_classes: usize) -> Vec<LabelVolume> {
    let mut out = Vec::with_capacity(levels);
    if levels == 0 {
        return out;
    }
    out.push(gt.clone());
    for _ in 1..levels {
        let next = downsample_labels(out.last().unwrap(), num_classes);
        out.push(next);
    }
    out
}
