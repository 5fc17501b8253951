//! Hash-based value noise. Smooth (C2) interpolation between lattice values,
//! summed over a couple of octaves, so textures are band-limited.

#[inline]
fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[inline]
fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = mix(seed ^ mix((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ mix((j as u64) ^ mix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Single-octave value noise in `[0, 1]`.
pub fn value3(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (i, j, k) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(x - fx), fade(y - fy), fade(z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut c = [0.0; 8];
    for (n, v) in c.iter_mut().enumerate() {
        *v = lattice(seed, i + (n & 1) as i64, j + ((n >> 1) & 1) as i64, k + ((n >> 2) & 1) as i64);
    }
    let x00 = lerp(c[0], c[1], tx);
    let x10 = lerp(c[2], c[3], tx);
    let x01 = lerp(c[4], c[5], tx);
    let x11 = lerp(c[6], c[7], tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

/// Two octaves at `freq` and `2 * freq`, normalized to `[0, 1]`.
pub fn fractal3(seed: u64, p: [f64; 3], freq: f64) -> f64 {
    let a = value3(seed, p[0] * freq, p[1] * freq, p[2] * freq);
    let b = value3(seed.wrapping_add(1), p[0] * 2.0 * freq, p[1] * 2.0 * freq, p[2] * 2.0 * freq);
    (2.0 * a + b) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_determinism() {
        for i in 0..1000 {
            let p = [i as f64 * 0.37, -(i as f64) * 0.11, i as f64 * 0.05];
            let v = fractal3(7, p, 1.3);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, fractal3(7, p, 1.3));
        }
        assert_ne!(value3(1, 0.5, 0.5, 0.5), value3(2, 0.5, 0.5, 0.5));
    }

    #[test]
    fn continuous_across_cells() {
        let a = value3(3, 1.0 - 1e-12, 0.3, 0.7);
        let b = value3(3, 1.0, 0.3, 0.7);
        assert!((a - b).abs() < 1e-9);
    }
}
