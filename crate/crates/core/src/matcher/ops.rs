use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Map, Mask};
use crate::nn::kernels;
use crate::nn::Tensor;

/// Probability floor used by [`kl_loss`].
pub const KL_FLOOR: f64 = 1e-8;

/// Per-level left and right features, finest level first. Level `l` (1-based)
/// has spatial size `H / 2^l x W / 2^l`; each tensor is `[C_l, H_l, W_l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub left: Vec<Tensor>,
    pub right: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn levels(&self) -> usize {
        self.left.len()
    }
}

/// Per-pixel distribution over disparity-residual hypotheses, `p` is `[K, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchDensity {
    pub p: Tensor,
    pub support: Vec<f64>,
}

impl MatchDensity {
    /// Checks shape, non-negativity and per-pixel normalization within 1e-5.
    pub fn new(p: Tensor, support: Vec<f64>) -> Result<Self> {
        let (k, h, w) = p.chw();
        if k != support.len() {
            return Err(Error::Shape(format!("{k} density channels for {} hypotheses", support.len())));
        }
        let hw = h * w;
        for q in 0..hw {
            let mut s = 0.0;
            for ki in 0..k {
                let x = p.data[ki * hw + q];
                if !(x >= 0.0) {
                    return Err(Error::Domain(format!("negative or NaN probability {x}")));
                }
                s += x;
            }
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::Domain(format!("density sums to {s} at pixel {q}")));
            }
        }
        Ok(Self { p, support })
    }

    pub fn hypotheses(&self) -> usize {
        self.support.len()
    }

    pub fn height(&self) -> usize {
        self.p.shape[1]
    }

    pub fn width(&self) -> usize {
        self.p.shape[2]
    }

    /// Probabilities of pixel `(v, u)`.
    pub fn at(&self, v: usize, u: usize) -> Vec<f64> {
        let hw = self.height() * self.width();
        let q = v * self.width() + u;
        (0..self.hypotheses()).map(|k| self.p.data[k * hw + q]).collect()
    }
}

/// Decoder state handed to the next finer level, `[C_e, H_l, W_l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEmbedding {
    pub e: Tensor,
}

/// Foreground and background masks per level, finest level first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub fg: Vec<Mask>,
    pub bg: Vec<Mask>,
}

impl SplitMasks {
    pub fn levels(&self) -> usize {
        self.fg.len()
    }

    /// Checks that every level partitions its grid.
    pub fn validate(&self) -> Result<()> {
        if self.fg.len() != self.bg.len() {
            return Err(Error::MaskPartition(format!("{} fg levels vs {} bg levels", self.fg.len(), self.bg.len())));
        }
        for (l, (f, b)) in self.fg.iter().zip(&self.bg).enumerate() {
            check_partition(f, b).map_err(|e| Error::MaskPartition(format!("level {}: {e}", l + 1)))?;
        }
        Ok(())
    }
}

fn check_partition(fg: &Mask, bg: &Mask) -> std::result::Result<(), String> {
    if fg.shape() != bg.shape() {
        return Err(format!("fg {:?} vs bg {:?}", fg.shape(), bg.shape()));
    }
    if let Some(i) = fg.data().iter().zip(bg.data()).position(|(a, b)| a == b) {
        return Err(format!("pixel {i} is {}", if fg.data()[i] { "in both" } else { "in neither" }));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Foreground preference in `[0, 1]`.
    pub lambda_f: f64,
    /// Point-cloud loss weight, `>= 0`.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_f: 0.7, alpha: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_f: f64, alpha: f64) -> Result<Self> {
        let w = Self { lambda_f, alpha };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_f) {
            return Err(Error::Config(format!("lambda_f {} outside [0, 1]", self.lambda_f)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Integer hypotheses `-r..=r`.
pub fn residual_support(max_residual: usize) -> Vec<f64> {
    let r = max_residual as i64;
    (-r..=r).map(|o| o as f64).collect()
}

/// Correlation of left features with right features sampled at
/// `u - (base + offset_k)`. Out-of-bounds taps get the minimum correlation of
/// unit features, -1. `base` is the per-pixel current estimate.
pub fn build_cost_volume(left: &Tensor, right: &Tensor, max_residual: usize, base: &[f64]) -> Result<Tensor> {
    let (c, h, w) = left.chw();
    if right.chw() != (c, h, w) {
        return Err(Error::Shape(format!("left {:?} vs right {:?}", left.shape, right.shape)));
    }
    if base.len() != h * w {
        return Err(Error::Shape(format!("base has {} entries for a {h}x{w} level", base.len())));
    }
    let offsets = residual_support(max_residual);
    let data = kernels::correlation(&left.data, &right.data, c, h, w, base, &offsets);
    Ok(Tensor::new(vec![offsets.len(), h, w], data))
}

/// `p_fg` on foreground pixels, `p_bg` elsewhere.
pub fn fuse_split_densities(p_fg: &MatchDensity, p_bg: &MatchDensity, fg: &Mask, bg: &Mask) -> Result<MatchDensity> {
    check_partition(fg, bg).map_err(Error::MaskPartition)?;
    if p_fg.p.shape != p_bg.p.shape || p_fg.support != p_bg.support {
        return Err(Error::Shape(format!("fg density {:?} vs bg density {:?}", p_fg.p.shape, p_bg.p.shape)));
    }
    let (k, h, w) = p_fg.p.chw();
    if fg.shape() != (h, w) {
        return Err(Error::Shape(format!("mask {:?} vs density {h}x{w}", fg.shape())));
    }
    let hw = h * w;
    let mut out = vec![0.0; k * hw];
    for q in 0..hw {
        let src = if fg.data()[q] { &p_fg.p.data } else { &p_bg.p.data };
        for ki in 0..k {
            out[ki * hw + q] = src[ki * hw + q];
        }
    }
    Ok(MatchDensity {
        p: Tensor::new(vec![k, h, w], out),
        support: p_fg.support.clone(),
    })
}

/// Expected residual per pixel.
pub fn density_to_residual(p: &MatchDensity) -> Map {
    let (k, h, w) = p.p.chw();
    let hw = h * w;
    Map::from_fn(h, w, |v, u| {
        let q = v * w + u;
        (0..k).map(|ki| p.p.data[ki * hw + q] * p.support[ki]).sum()
    })
}

/// Largest hypothesis probability per pixel.
pub fn extract_confidence(p: &MatchDensity) -> Map {
    let (k, h, w) = p.p.chw();
    let hw = h * w;
    Map::from_fn(h, w, |v, u| {
        let q = v * w + u;
        (0..k).map(|ki| p.p.data[ki * hw + q]).fold(0.0, f64::max)
    })
}

/// Mean over masked pixels of `KL(p_gt || p_pred)`, with predicted
/// probabilities floored at [`KL_FLOOR`] (or at the target probability when
/// that is smaller, so identical densities score exactly 0). An empty mask
/// gives 0.
pub fn kl_loss(p_pred: &MatchDensity, p_gt: &MatchDensity, mask: &Mask) -> Result<f64> {
    if p_pred.support != p_gt.support || p_pred.p.shape != p_gt.p.shape {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", p_pred.p.shape, p_gt.p.shape)));
    }
    let (k, h, w) = p_pred.p.chw();
    if mask.shape() != (h, w) {
        return Err(Error::Shape(format!("mask {:?} vs density {h}x{w}", mask.shape())));
    }
    let n = mask.count();
    if n == 0 {
        log::warn!("kl_loss: empty mask, contributing 0");
        return Ok(0.0);
    }
    let hw = h * w;
    let mut total = 0.0;
    for q in (0..hw).filter(|&q| mask.data()[q]) {
        for ki in 0..k {
            let t = p_gt.p.data[ki * hw + q];
            if t > 0.0 {
                total += t * (t.ln() - p_pred.p.data[ki * hw + q].max(t.min(KL_FLOOR)).ln());
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean smooth-L1 over all coordinates of two pixel-aligned clouds.
pub fn point_cloud_loss(pred: &[[f64; 3]], gt: &[[f64; 3]], beta: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted points vs {} ground-truth points", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| (0..3).map(move |a| kernels::smooth_l1(p[a] - g[a], beta)))
        .sum();
    Ok(total / (3 * pred.len()) as f64)
}

/// `lambda_f * l_fg + (1 - lambda_f) * l_bg + alpha * l_pc`.
pub fn total_loss(l_fg: f64, l_bg: f64, l_pc: f64, w: &LossWeights) -> Result<f64> {
    for (name, x) in [("L_fg", l_fg), ("L_bg", l_bg), ("L_pc", l_pc)] {
        if !x.is_finite() {
            return Err(Error::NonFiniteComponent(name));
        }
    }
    w.validate()?;
    Ok(w.lambda_f * l_fg + (1.0 - w.lambda_f) * l_bg + w.alpha * l_pc)
}

/// Majority-vote pooling of a full-resolution foreground mask, one 2x step per
/// level; a 2/2 tie goes to the foreground.
pub fn downsample_masks(fg: &Mask, levels: usize) -> Result<SplitMasks> {
    let (h, w) = fg.shape();
    let f = 1usize << levels;
    if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("{h}x{w} mask is not divisible by 2^{levels}")));
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = fg.clone();
    for _ in 0..levels {
        let next = Mask::from_fn(cur.height() / 2, cur.width() / 2, |v, u| {
            let n = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .filter(|(dv, du)| *cur.get(2 * v + dv, 2 * u + du))
                .count();
            n >= 2
        });
        out.push(next.clone());
        cur = next;
    }
    let bg = out.iter().map(Mask::not).collect();
    Ok(SplitMasks { fg: out, bg })
}

/// Per-level ground-truth disparity, in level-`l` pixels.
///
/// Each level pixel averages the valid full-resolution pixels of its block
/// that share its foreground label, falling back to all valid pixels of the
/// block. Blocks without a valid pixel are marked invalid.
pub fn level_disparity(gt: &Map, valid: &Mask, fg_full: &Mask, fg_level: &Mask, level: usize) -> (Map, Mask) {
    let f = 1usize << level;
    let (h, w) = fg_level.shape();
    let mut d = Map::filled(h, w, 0.0);
    let mut ok = Mask::filled(h, w, false);
    for v in 0..h {
        for u in 0..w {
            let want = *fg_level.get(v, u);
            let (mut same, mut ns, mut all, mut na) = (0.0, 0usize, 0.0, 0usize);
            for y in v * f..(v + 1) * f {
                for x in u * f..(u + 1) * f {
                    if !*valid.get(y, x) {
                        continue;
                    }
                    let g = *gt.get(y, x);
                    all += g;
                    na += 1;
                    if *fg_full.get(y, x) == want {
                        same += g;
                        ns += 1;
                    }
                }
            }
            if na > 0 {
                let mean = if ns > 0 { same / ns as f64 } else { all / na as f64 };
                d.set(v, u, mean / f as f64);
                ok.set(v, u, true);
            }
        }
    }
    (d, ok)
}

/// Two-bin interpolated point mass on the clamped residual, `[K * hw]` with
/// the hypothesis axis leading. Its expectation equals the clamped residual.
pub fn residual_target(residual: &[f64], max_residual: usize) -> Vec<f64> {
    let k = 2 * max_residual + 1;
    let r = max_residual as f64;
    let hw = residual.len();
    let mut t = vec![0.0; k * hw];
    for (q, &x) in residual.iter().enumerate() {
        let pos = x.clamp(-r, r) + r;
        let i0 = (pos.floor() as usize).min(k - 1);
        let frac = pos - i0 as f64;
        t[i0 * hw + q] = 1.0 - frac;
        if frac > 0.0 {
            t[(i0 + 1) * hw + q] = frac;
        }
    }
    t
}
