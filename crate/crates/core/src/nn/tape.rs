//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with
//! respect to every node that influences it. Only the operations the stereo
//! matcher and the point detector need are provided.

use super::gemm::gemm;
use super::kernels;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// `(flat index into a tensor, target, weight)` triple used by the picked losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub target: f64,
    pub weight: f64,
}

/// Pixel-aligned ground truth for the point-cloud loss.
#[derive(Clone, Debug)]
pub struct CloudTarget {
    /// `(v, u)` pixel of each point.
    pub pixels: Vec<(usize, usize)>,
    pub points: Vec<[f64; 3]>,
    /// `(c_u, c_v, f_u, f_v, baseline)`.
    pub rig: [f64; 5],
    pub beta: f64,
    /// Disparities below this are clamped (zero gradient) before back-projection.
    pub min_disparity: f64,
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<f64>, k: usize },
    LeakyRelu { x: Var, slope: f64 },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    L2Normalize { x: Var, norms: Vec<f64> },
    Correlation { left: Var, right: Var, base: Vec<f64>, offsets: Vec<f64> },
    Softmax { x: Var },
    Expectation { p: Var, values: Vec<f64> },
    Select { mask: Vec<bool>, a: Var, b: Var },
    KlLogits { logits: Var, target: Vec<f64>, mask: Vec<bool>, count: usize },
    CloudLoss { disp: Var, target: Box<CloudTarget> },
    MatMul { a: Var, b: Var },
    AddBias { x: Var, b: Var },
    SegmentMax { x: Var, argmax: Vec<usize> },
    PickBce { x: Var, picks: Vec<Pick> },
    PickSmoothL1 { x: Var, picks: Vec<Pick>, beta: f64 },
    PickSinDiff { x: Var, picks: Vec<Pick>, beta: f64 },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to the nodes of a tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

const ABSENT: usize = usize::MAX;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Same-padded stride-1 convolution; `w` is `[O, C, k, k]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (c, h, wd) = self.value(x).chw();
        let ws = &self.value(w).shape;
        assert_eq!(ws.len(), 4, "conv weight must be [O, C, k, k]");
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv input channels");
        assert_eq!(self.value(b).len(), o, "conv bias length");
        let cols = kernels::im2col(&self.value(x).data, c, h, wd, k);
        let hw = h * wd;
        let mut out = vec![0.0; o * hw];
        let bias = &self.value(b).data;
        for oi in 0..o {
            out[oi * hw..(oi + 1) * hw].iter_mut().for_each(|v| *v = bias[oi]);
        }
        gemm(o, c * k * k, hw, &self.value(w).data, false, &cols, false, 1.0, &mut out);
        self.push(Tensor::new(vec![o, h, wd], out), Op::Conv2d { x, w, b, cols, k })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "add: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v * s).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), Op::Scale { x, s })
    }

    /// Channel concatenation of `[C_i, H, W]` maps.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (_, h, w) = self.value(parts[0]).chw();
        let mut data = Vec::new();
        let mut c_total = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat: spatial mismatch");
            c_total += c;
            data.extend_from_slice(&self.value(p).data);
        }
        self.push(
            Tensor::new(vec![c_total, h, w], data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(start + len <= c, "slice out of range");
        let hw = h * w;
        let data = self.value(x).data[start * hw..(start + len) * hw].to_vec();
        self.push(Tensor::new(vec![len, h, w], data), Op::Slice { x, start })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sizes, got {h}x{w}");
        let data = kernels::avg_pool2(&self.value(x).data, c, h, w);
        self.push(Tensor::new(vec![c, h / 2, w / 2], data), Op::AvgPool2 { x })
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let data = kernels::upsample2(&self.value(x).data, c, h, w);
        self.push(Tensor::new(vec![c, 2 * h, 2 * w], data), Op::Upsample2 { x })
    }

    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (y, norms) = kernels::l2_normalize(&self.value(x).data, c, h * w, eps);
        self.push(Tensor::new(vec![c, h, w], y), Op::L2Normalize { x, norms })
    }

    /// Correlation volume against a fixed per-pixel base disparity. The base
    /// is a constant: no gradient flows into it.
    pub fn correlation(&mut self, left: Var, right: Var, base: Vec<f64>, offsets: Vec<f64>) -> Var {
        let (c, h, w) = self.value(left).chw();
        assert_eq!(self.value(right).chw(), (c, h, w), "correlation: shape mismatch");
        assert_eq!(base.len(), h * w, "correlation: base size");
        let data = kernels::correlation(
            &self.value(left).data,
            &self.value(right).data,
            c,
            h,
            w,
            &base,
            &offsets,
        );
        self.push(
            Tensor::new(vec![offsets.len(), h, w], data),
            Op::Correlation {
                left,
                right,
                base,
                offsets,
            },
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (k, h, w) = self.value(x).chw();
        let data = kernels::softmax_channels(&self.value(x).data, k, h * w);
        self.push(Tensor::new(vec![k, h, w], data), Op::Softmax { x })
    }

    /// `sum_k p[k] * values[k]` per pixel, giving `[1, H, W]`.
    pub fn expectation(&mut self, p: Var, values: Vec<f64>) -> Var {
        let (k, h, w) = self.value(p).chw();
        assert_eq!(values.len(), k);
        let hw = h * w;
        let pd = &self.value(p).data;
        let mut out = vec![0.0; hw];
        for (ki, &val) in values.iter().enumerate() {
            for q in 0..hw {
                out[q] += pd[ki * hw + q] * val;
            }
        }
        self.push(Tensor::new(vec![1, h, w], out), Op::Expectation { p, values })
    }

    /// Per-pixel selection: `a` where `mask`, else `b`.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Var {
        let (c, h, w) = self.value(a).chw();
        assert_eq!(self.value(b).chw(), (c, h, w), "select: shape mismatch");
        assert_eq!(mask.len(), h * w, "select: mask size");
        let hw = h * w;
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let mut out = vec![0.0; c * hw];
        for ci in 0..c {
            for q in 0..hw {
                out[ci * hw + q] = if mask[q] { da[ci * hw + q] } else { db[ci * hw + q] };
            }
        }
        self.push(Tensor::new(vec![c, h, w], out), Op::Select { mask, a, b })
    }

    /// Mean over masked pixels of `KL(target || softmax(logits))`. An empty
    /// mask yields 0.
    pub fn kl_logits(&mut self, logits: Var, target: Vec<f64>, mask: Vec<bool>) -> Var {
        let (k, h, w) = self.value(logits).chw();
        let hw = h * w;
        assert_eq!(target.len(), k * hw);
        assert_eq!(mask.len(), hw);
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = 0.0;
        if count > 0 {
            let logp = kernels::log_softmax_channels(&self.value(logits).data, k, hw);
            for q in 0..hw {
                if !mask[q] {
                    continue;
                }
                for ki in 0..k {
                    let t = target[ki * hw + q];
                    if t > 0.0 {
                        total += t * (t.ln() - logp[ki * hw + q]);
                    }
                }
            }
            total /= count as f64;
        }
        self.push(
            Tensor::scalar(total),
            Op::KlLogits {
                logits,
                target,
                mask,
                count,
            },
        )
    }

    /// Mean smooth-L1 between the points back-projected from `disp`
    /// (`[1, H, W]`) at the target pixels and the target points.
    pub fn cloud_loss(&mut self, disp: Var, target: CloudTarget) -> Var {
        let (_, _, w) = self.value(disp).chw();
        let d = &self.value(disp).data;
        let n = target.points.len();
        let mut total = 0.0;
        for (i, &(v, u)) in target.pixels.iter().enumerate() {
            let p = back_project(u, v, d[v * w + u], &target);
            for a in 0..3 {
                total += kernels::smooth_l1(p[a] - target.points[i][a], target.beta);
            }
        }
        let value = if n > 0 { total / (3 * n) as f64 } else { 0.0 };
        self.push(
            Tensor::scalar(value),
            Op::CloudLoss {
                disp,
                target: Box::new(target),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).rc();
        let (k2, n) = self.value(b).rc();
        assert_eq!(k, k2, "matmul: inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, 0.0, &mut out);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul { a, b })
    }

    /// Row-broadcast bias: `[N, M] + [M]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (n, m) = self.value(x).rc();
        assert_eq!(self.value(b).len(), m, "add_bias: width");
        let bias = &self.value(b).data;
        let mut out = self.value(x).data.clone();
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] += bias[c];
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::AddBias { x, b })
    }

    /// Column-wise max over contiguous row segments `offsets[s]..offsets[s+1]`
    /// of an `[N, C]` matrix. Empty segments produce zeros.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Var {
        let (_, c) = self.value(x).rc();
        let xd = &self.value(x).data;
        let s = offsets.len() - 1;
        let mut out = vec![0.0; s * c];
        let mut argmax = vec![ABSENT; s * c];
        for si in 0..s {
            let (r0, r1) = (offsets[si], offsets[si + 1]);
            for ci in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = ABSENT;
                for r in r0..r1 {
                    if xd[r * c + ci] > best {
                        best = xd[r * c + ci];
                        arg = r;
                    }
                }
                if arg != ABSENT {
                    out[si * c + ci] = best;
                    argmax[si * c + ci] = arg;
                }
            }
        }
        self.push(Tensor::new(vec![s, c], out), Op::SegmentMax { x, argmax })
    }

    /// Weighted sum of binary cross-entropies on picked logits.
    pub fn pick_bce(&mut self, x: Var, picks: Vec<Pick>) -> Var {
        let d = &self.value(x).data;
        let v = picks
            .iter()
            .map(|p| p.weight * kernels::bce_with_logit(d[p.index], p.target))
            .sum();
        self.push(Tensor::scalar(v), Op::PickBce { x, picks })
    }

    pub fn pick_smooth_l1(&mut self, x: Var, picks: Vec<Pick>, beta: f64) -> Var {
        let d = &self.value(x).data;
        let v = picks
            .iter()
            .map(|p| p.weight * kernels::smooth_l1(d[p.index] - p.target, beta))
            .sum();
        self.push(Tensor::scalar(v), Op::PickSmoothL1 { x, picks, beta })
    }

    /// Sine-difference angle loss: `smooth_l1(sin(x - target))`.
    pub fn pick_sin_diff(&mut self, x: Var, picks: Vec<Pick>, beta: f64) -> Var {
        let d = &self.value(x).data;
        let v = picks
            .iter()
            .map(|p| p.weight * kernels::smooth_l1((d[p.index] - p.target).sin(), beta))
            .sum();
        self.push(Tensor::scalar(v), Op::PickSinDiff { x, picks, beta })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(t, w)| w * self.value(t).item()).sum();
        self.push(
            Tensor::scalar(v),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        )
    }

    /// Gradient of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, cols, k } => {
                let (c, h, wd) = val(*x).chw();
                let o = val(*w).shape[0];
                let hw = h * wd;
                let ckk = c * k * k;
                acc(grads, *w, val(*w).len(), |dw| {
                    gemm(o, hw, ckk, g, false, cols, true, 1.0, dw);
                });
                acc(grads, *b, o, |db| {
                    for oi in 0..o {
                        db[oi] += g[oi * hw..(oi + 1) * hw].iter().sum::<f64>();
                    }
                });
                let mut dcols = vec![0.0; ckk * hw];
                gemm(ckk, o, hw, &val(*w).data, true, g, false, 0.0, &mut dcols);
                acc(grads, *x, c * hw, |dx| kernels::col2im_add(&dcols, c, h, wd, *k, dx));
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |dx| {
                    for j in 0..xv.len() {
                        dx[j] += if xv[j] > 0.0 { g[j] } else { slope * g[j] };
                    }
                });
            }
            Op::Relu { x } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |dx| {
                    for j in 0..xv.len() {
                        if xv[j] > 0.0 {
                            dx[j] += g[j];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.len(), |d| add_into(d, g));
                acc(grads, *b, g.len(), |d| add_into(d, g));
            }
            Op::Scale { x, s } => {
                acc(grads, *x, g.len(), |d| {
                    for j in 0..g.len() {
                        d[j] += s * g[j];
                    }
                });
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(grads, p, n, |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let (_, h, w) = val(*x).chw();
                let off = start * h * w;
                acc(grads, *x, val(*x).len(), |d| add_into(&mut d[off..off + g.len()], g));
            }
            Op::AvgPool2 { x } => {
                let (c, h, w) = val(*x).chw();
                let (ho, wo) = (h / 2, w / 2);
                acc(grads, *x, val(*x).len(), |d| {
                    for ci in 0..c {
                        for y in 0..ho {
                            for xo in 0..wo {
                                let gv = 0.25 * g[(ci * ho + y) * wo + xo];
                                d[(ci * h + 2 * y) * w + 2 * xo] += gv;
                                d[(ci * h + 2 * y) * w + 2 * xo + 1] += gv;
                                d[(ci * h + 2 * y + 1) * w + 2 * xo] += gv;
                                d[(ci * h + 2 * y + 1) * w + 2 * xo + 1] += gv;
                            }
                        }
                    }
                });
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = val(*x).chw();
                acc(grads, *x, val(*x).len(), |d| kernels::upsample2_backward(g, c, h, w, d));
            }
            Op::L2Normalize { x, norms } => {
                let (c, h, w) = val(*x).chw();
                let hw = h * w;
                let y = &node.value.data;
                let mut dot = vec![0.0; hw];
                for ci in 0..c {
                    for q in 0..hw {
                        dot[q] += y[ci * hw + q] * g[ci * hw + q];
                    }
                }
                acc(grads, *x, c * hw, |d| {
                    for ci in 0..c {
                        for q in 0..hw {
                            let j = ci * hw + q;
                            d[j] += (g[j] - y[j] * dot[q]) / norms[q];
                        }
                    }
                });
            }
            Op::Correlation {
                left,
                right,
                base,
                offsets,
            } => {
                let (c, h, w) = val(*left).chw();
                let hw = h * w;
                let (lv, rv) = (&val(*left).data, &val(*right).data);
                let mut dl = vec![0.0; c * hw];
                let mut dr = vec![0.0; c * hw];
                for v in 0..h {
                    for u in 0..w {
                        let p = v * w + u;
                        for (ki, &off) in offsets.iter().enumerate() {
                            let gv = g[ki * hw + p];
                            if gv == 0.0 {
                                continue;
                            }
                            if let Some((x0, x1, f)) = kernels::right_tap(u, base[p], off, w) {
                                for ci in 0..c {
                                    let r0 = ci * hw + v * w + x0;
                                    let r1 = ci * hw + v * w + x1;
                                    dl[ci * hw + p] += gv * ((1.0 - f) * rv[r0] + f * rv[r1]);
                                    let lg = gv * lv[ci * hw + p];
                                    dr[r0] += (1.0 - f) * lg;
                                    dr[r1] += f * lg;
                                }
                            }
                        }
                    }
                }
                acc(grads, *left, c * hw, |d| add_into(d, &dl));
                acc(grads, *right, c * hw, |d| add_into(d, &dr));
            }
            Op::Softmax { x } => {
                let (k, h, w) = val(*x).chw();
                let hw = h * w;
                let p = &node.value.data;
                acc(grads, *x, k * hw, |d| {
                    for q in 0..hw {
                        let mut s = 0.0;
                        for ki in 0..k {
                            s += p[ki * hw + q] * g[ki * hw + q];
                        }
                        for ki in 0..k {
                            let j = ki * hw + q;
                            d[j] += p[j] * (g[j] - s);
                        }
                    }
                });
            }
            Op::Expectation { p, values } => {
                let (k, h, w) = val(*p).chw();
                let hw = h * w;
                acc(grads, *p, k * hw, |d| {
                    for (ki, &v) in values.iter().enumerate() {
                        for q in 0..hw {
                            d[ki * hw + q] += g[q] * v;
                        }
                    }
                });
            }
            Op::Select { mask, a, b } => {
                let (c, h, w) = val(*a).chw();
                let hw = h * w;
                acc(grads, *a, c * hw, |d| {
                    for ci in 0..c {
                        for q in 0..hw {
                            if mask[q] {
                                d[ci * hw + q] += g[ci * hw + q];
                            }
                        }
                    }
                });
                acc(grads, *b, c * hw, |d| {
                    for ci in 0..c {
                        for q in 0..hw {
                            if !mask[q] {
                                d[ci * hw + q] += g[ci * hw + q];
                            }
                        }
                    }
                });
            }
            Op::KlLogits {
                logits,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (k, h, w) = val(*logits).chw();
                let hw = h * w;
                let p = kernels::softmax_channels(&val(*logits).data, k, hw);
                let s = g[0] / *count as f64;
                acc(grads, *logits, k * hw, |d| {
                    for q in 0..hw {
                        if !mask[q] {
                            continue;
                        }
                        let tsum: f64 = (0..k).map(|ki| target[ki * hw + q]).sum();
                        for ki in 0..k {
                            let j = ki * hw + q;
                            d[j] += s * (tsum * p[j] - target[j]);
                        }
                    }
                });
            }
            Op::CloudLoss { disp, target } => {
                let n = target.points.len();
                if n == 0 {
                    return;
                }
                let (_, _, w) = val(*disp).chw();
                let d = &val(*disp).data;
                let s = g[0] / (3 * n) as f64;
                let [cu, cv, fu, fv, _] = target.rig;
                acc(grads, *disp, d.len(), |dd| {
                    for (i, &(v, u)) in target.pixels.iter().enumerate() {
                        let dv = d[v * w + u];
                        if dv < target.min_disparity {
                            continue;
                        }
                        let p = back_project(u, v, dv, target);
                        let dz = -p[2] / dv;
                        let dx = (u as f64 - cu) / fu * dz;
                        let dy = (v as f64 - cv) / fv * dz;
                        let gsum = kernels::smooth_l1_grad(p[0] - target.points[i][0], target.beta) * dx
                            + kernels::smooth_l1_grad(p[1] - target.points[i][1], target.beta) * dy
                            + kernels::smooth_l1_grad(p[2] - target.points[i][2], target.beta) * dz;
                        dd[v * w + u] += s * gsum;
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (m, k) = val(*a).rc();
                let (_, n) = val(*b).rc();
                let (av, bv) = (&val(*a).data, &val(*b).data);
                acc(grads, *a, m * k, |d| gemm(m, n, k, g, false, bv, true, 1.0, d));
                acc(grads, *b, k * n, |d| gemm(k, m, n, av, true, g, false, 1.0, d));
            }
            Op::AddBias { x, b } => {
                let (n, m) = val(*x).rc();
                acc(grads, *x, n * m, |d| add_into(d, g));
                acc(grads, *b, m, |d| {
                    for r in 0..n {
                        for c in 0..m {
                            d[c] += g[r * m + c];
                        }
                    }
                });
            }
            Op::SegmentMax { x, argmax } => {
                let (_, c) = val(*x).rc();
                acc(grads, *x, val(*x).len(), |d| {
                    for (j, &r) in argmax.iter().enumerate() {
                        if r != ABSENT {
                            d[r * c + j % c] += g[j];
                        }
                    }
                });
            }
            Op::PickBce { x, picks } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |d| {
                    for p in picks {
                        d[p.index] += g[0] * p.weight * (kernels::sigmoid(xv[p.index]) - p.target);
                    }
                });
            }
            Op::PickSmoothL1 { x, picks, beta } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |d| {
                    for p in picks {
                        d[p.index] += g[0] * p.weight * kernels::smooth_l1_grad(xv[p.index] - p.target, *beta);
                    }
                });
            }
            Op::PickSinDiff { x, picks, beta } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |d| {
                    for p in picks {
                        let a = xv[p.index] - p.target;
                        d[p.index] += g[0] * p.weight * kernels::smooth_l1_grad(a.sin(), *beta) * a.cos();
                    }
                });
            }
            Op::WeightedSum { terms } => {
                for &(t, wgt) in terms {
                    acc(grads, t, 1, |d| d[0] += wgt * g[0]);
                }
            }
        }
    }
}

fn back_project(u: usize, v: usize, d: f64, t: &CloudTarget) -> [f64; 3] {
    let [cu, cv, fu, fv, b] = t.rig;
    let d = d.max(t.min_disparity);
    let z = fu * b / d;
    [(u as f64 - cu) * z / fu, (v as f64 - cv) * z / fv, z]
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (a, b) in d.iter_mut().zip(g) {
        *a += b;
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}
