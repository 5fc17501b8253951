//! Forward/backward kernels on `[C, H, W]` buffers, shared by the tape and
//! by the tape-free operations exposed elsewhere in the crate.

/// Correlation written to out-of-bounds hypotheses. Inputs are unit-normalized
/// per pixel, so every in-bounds correlation lies in [-1, 1].
pub const OUT_OF_BOUNDS_CORRELATION: f64 = -1.0;

pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize) - dx).min(w as isize).max(0) as usize;
                    for xo in x0..x1 {
                        dst_row[xo] = src_row[(xo as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dx_out: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = ci * hw + sy as usize * w;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize) - dx).min(w as isize).max(0) as usize;
                    for xo in x0..x1 {
                        dx_out[base + (xo as isize + dx) as usize] += src[y * w + xo];
                    }
                }
            }
        }
    }
}

pub fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let i = |yy: usize, xx: usize| x[(ci * h + yy) * w + xx];
                out[(ci * ho + y) * wo + xo] = 0.25
                    * (i(2 * y, 2 * xo) + i(2 * y, 2 * xo + 1) + i(2 * y + 1, 2 * xo) + i(2 * y + 1, 2 * xo + 1));
            }
        }
    }
    out
}

/// Source taps for one output coordinate of a 2x bilinear upsampling
/// (half-pixel centers, edge clamped).
#[inline]
fn up_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

pub fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            let (y0, y1, fy) = up_taps(y, h);
            for xo in 0..wo {
                let (x0, x1, fx) = up_taps(xo, w);
                let p = |yy: usize, xx: usize| x[(ci * h + yy) * w + xx];
                out[(ci * ho + y) * wo + xo] = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1))
                    + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
            }
        }
    }
    out
}

pub fn upsample2_backward(g: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = (2 * h, 2 * w);
    for ci in 0..c {
        for y in 0..ho {
            let (y0, y1, fy) = up_taps(y, h);
            for xo in 0..wo {
                let (x0, x1, fx) = up_taps(xo, w);
                let gv = g[(ci * ho + y) * wo + xo];
                let base = ci * h;
                dx[(base + y0) * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                dx[(base + y0) * w + x1] += gv * (1.0 - fy) * fx;
                dx[(base + y1) * w + x0] += gv * fy * (1.0 - fx);
                dx[(base + y1) * w + x1] += gv * fy * fx;
            }
        }
    }
}

/// Per-pixel L2 normalization across channels; returns `(y, norms)`.
pub fn l2_normalize(x: &[f64], c: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![0.0; hw];
    for ci in 0..c {
        for p in 0..hw {
            norms[p] += x[ci * hw + p] * x[ci * hw + p];
        }
    }
    norms.iter_mut().for_each(|n| *n = (*n + eps).sqrt());
    let mut y = vec![0.0; x.len()];
    for ci in 0..c {
        for p in 0..hw {
            y[ci * hw + p] = x[ci * hw + p] / norms[p];
        }
    }
    (y, norms)
}

/// Sampling position in the right image for hypothesis `offset` at left
/// column `u`, or `None` when it falls outside the row.
#[inline]
pub fn right_tap(u: usize, base: f64, offset: f64, w: usize) -> Option<(usize, usize, f64)> {
    let x = u as f64 - (base + offset);
    if !(x >= 0.0 && x <= (w - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    Some((x0, x1, x - x0 as f64))
}

/// Correlation volume `[K, H, W]`: entry `k` at `(v, u)` is the dot product of
/// the left feature at `(v, u)` with the right feature linearly sampled at
/// `(v, u - base(v, u) - offsets[k])`.
pub fn correlation(
    left: &[f64],
    right: &[f64],
    c: usize,
    h: usize,
    w: usize,
    base: &[f64],
    offsets: &[f64],
) -> Vec<f64> {
    let hw = h * w;
    let k = offsets.len();
    let mut out = vec![OUT_OF_BOUNDS_CORRELATION; k * hw];
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            for (ki, &off) in offsets.iter().enumerate() {
                if let Some((x0, x1, f)) = right_tap(u, base[p], off, w) {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        let r = (1.0 - f) * right[ci * hw + v * w + x0] + f * right[ci * hw + v * w + x1];
                        acc += left[ci * hw + p] * r;
                    }
                    out[ki * hw + p] = acc;
                }
            }
        }
    }
    out
}

/// Softmax over the leading (hypothesis) axis of a `[K, H, W]` buffer.
pub fn softmax_channels(x: &[f64], k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in 0..hw {
        let mut m = f64::NEG_INFINITY;
        for ki in 0..k {
            m = m.max(x[ki * hw + p]);
        }
        let mut s = 0.0;
        for ki in 0..k {
            let e = (x[ki * hw + p] - m).exp();
            out[ki * hw + p] = e;
            s += e;
        }
        for ki in 0..k {
            out[ki * hw + p] /= s;
        }
    }
    out
}

/// Log-softmax over the leading axis.
pub fn log_softmax_channels(x: &[f64], k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in 0..hw {
        let mut m = f64::NEG_INFINITY;
        for ki in 0..k {
            m = m.max(x[ki * hw + p]);
        }
        let mut s = 0.0;
        for ki in 0..k {
            s += (x[ki * hw + p] - m).exp();
        }
        let lse = m + s.ln();
        for ki in 0..k {
            out[ki * hw + p] = x[ki * hw + p] - lse;
        }
    }
    out
}

#[inline]
pub fn smooth_l1(r: f64, beta: f64) -> f64 {
    let a = r.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
pub fn smooth_l1_grad(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r / beta
    } else {
        r.signum()
    }
}

/// Numerically stable binary cross-entropy on a logit.
#[inline]
pub fn bce_with_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
