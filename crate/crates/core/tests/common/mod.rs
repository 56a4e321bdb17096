//! Independent reference implementations used as test oracles. Everything
//! here is written with plain loops in f64 and shares no code with the
//! library beyond its public data types.
#![allow(dead_code)]

use brt_core::proxnet::{Conv2d, ProxNetParams};

pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

/// Planar `c x h x w` feature map in f64.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

pub fn conv(layer: &Conv2d, input: &Map) -> Map {
    let k = layer.kernel;
    let pad = (k / 2) as isize;
    let (h, w) = (input.h, input.w);
    let mut v = vec![0.0; layer.out_channels * h * w];
    for o in 0..layer.out_channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = layer.bias[o] as f64;
                for i in 0..layer.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = mirror(y as isize + ky as isize - pad, h);
                            let sx = mirror(x as isize + kx as isize - pad, w);
                            let wt = layer.weight[((o * layer.in_channels + i) * k + ky) * k + kx] as f64;
                            acc += wt * input.at(i, sy, sx);
                        }
                    }
                }
                v[(o * h + y) * w + x] = acc;
            }
        }
    }
    Map { c: layer.out_channels, h, w, v }
}

pub fn prelu(m: &Map, slope: &[f32]) -> Map {
    let mut out = m.clone();
    let hw = m.h * m.w;
    for (i, v) in out.v.iter_mut().enumerate() {
        if *v <= 0.0 {
            *v *= slope[i / hw] as f64;
        }
    }
    out
}

/// Reference forward pass on interleaved `h x w x 3` data.
pub fn proxnet_forward(p: &ProxNetParams, noisy: &[f64], h: usize, w: usize, sigma: f64, s_t: f64) -> Vec<f64> {
    let mut x = Map { c: 3, h, w, v: vec![0.0; 3 * h * w] };
    for y in 0..h {
        for xx in 0..w {
            for c in 0..3 {
                x.v[(c * h + y) * w + xx] = noisy[(y * w + xx) * 3 + c];
            }
        }
    }
    let mut feat = prelu(&conv(&p.input, &x), &p.input_slope);
    for b in &p.blocks {
        let inner = prelu(&conv(&b.conv2, &prelu(&conv(&b.conv1, &feat), &b.slope1)), &b.slope2);
        for (f, d) in feat.v.iter_mut().zip(&inner.v) {
            *f += d;
        }
    }
    let r = conv(&p.output, &feat);
    let n = (3 * h * w) as f64;
    let theta = s_t.exp() * sigma * (n - 1.0).sqrt();
    let norm = r.v.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = theta / norm.max(theta);
    let mut out = noisy.to_vec();
    for y in 0..h {
        for xx in 0..w {
            for c in 0..3 {
                out[(y * w + xx) * 3 + c] -= scale * r.at(c, y, xx);
            }
        }
    }
    out
}

/// Dense bilinear sampling of an interleaved image at `(sx, sy)`; `None`
/// when the point lies outside `[0, w-1] x [0, h-1]`.
pub fn bilinear_at(data: &[f64], h: usize, w: usize, c: usize, sx: f64, sy: f64, ch: usize) -> Option<f64> {
    if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
        return None;
    }
    let x0 = (sx.floor() as usize).min(w - 1);
    let y0 = (sy.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let px = |y: usize, x: usize| data[(y * w + x) * c + ch];
    Some(
        (1.0 - fx) * (1.0 - fy) * px(y0, x0)
            + fx * (1.0 - fy) * px(y0, x1)
            + (1.0 - fx) * fy * px(y1, x0)
            + fx * fy * px(y1, x1),
    )
}

/// Rigid map `p -> R(theta)(p - c) + c + d`, written out independently.
pub fn rigid_apply(theta: f64, dx: f64, dy: f64, cx: f64, cy: f64, x: f64, y: f64) -> (f64, f64) {
    let (s, co) = theta.sin_cos();
    let (u, v) = (x - cx, y - cy);
    (co * u - s * v + cx + dx, s * u + co * v + cy + dy)
}

/// Warp `x` (interleaved) with the gather transform, zero outside.
pub fn dense_warp(x: &[f64], h: usize, w: usize, c: usize, t: (f64, f64, f64)) -> Vec<f64> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (sx, sy) = rigid_apply(t.0, t.1, t.2, cx, cy, xx as f64, y as f64);
            for ch in 0..c {
                out[(y * w + xx) * c + ch] = bilinear_at(x, h, w, c, sx, sy, ch).unwrap_or(0.0);
            }
        }
    }
    out
}

/// RGGB mask with no offset: keep channel R at (even, even), B at (odd,
/// odd), G elsewhere.
pub fn rggb_mask(x: &mut [f64], h: usize, w: usize) {
    for y in 0..h {
        for xx in 0..w {
            let keep = match (y % 2, xx % 2) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            };
            for ch in 0..3 {
                if ch != keep {
                    x[(y * w + xx) * 3 + ch] = 0.0;
                }
            }
        }
    }
}

/// `1/(2 sigma^2 B) sum_i ||y_i - H S_i x||^2` with dense warps.
pub fn fidelity(x: &[f64], frames: &[Vec<f64>], transforms: &[(f64, f64, f64)], cfa: bool, h: usize, w: usize, sigma: f64) -> f64 {
    let mut total = 0.0;
    for (y, t) in frames.iter().zip(transforms) {
        let mut p = dense_warp(x, h, w, 3, *t);
        if cfa {
            rggb_mask(&mut p, h, w);
        }
        total += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    total / (2.0 * sigma * sigma * frames.len() as f64)
}

/// Mean displacement of the four image corners between two maps.
pub fn corner_error(a: impl Fn(f64, f64) -> (f64, f64), b: impl Fn(f64, f64) -> (f64, f64), h: usize, w: usize) -> f64 {
    let corners = [(0.0, 0.0), ((w - 1) as f64, 0.0), (0.0, (h - 1) as f64), ((w - 1) as f64, (h - 1) as f64)];
    corners
        .iter()
        .map(|&(x, y)| {
            let (p, q) = (a(x, y), b(x, y));
            ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}

/// Pixel-level dense matrix of the gather warp (`h*w x h*w`), obtained by
/// warping unit impulses.
pub fn dense_warp_matrix(h: usize, w: usize, t: (f64, f64, f64)) -> Vec<Vec<f64>> {
    let n = h * w;
    let mut m = vec![vec![0.0; n]; n];
    for s in 0..n {
        let mut e = vec![0.0; n];
        e[s] = 1.0;
        let col = dense_warp(&e, h, w, 1, t);
        for r in 0..n {
            m[r][s] = col[r];
        }
    }
    m
}

/// Identity-op unrolled solver in f64 with the reference-frame start,
/// returning the final (unclamped) iterate. `warps` are dense matrices.
pub fn unrolled_solver(
    p: &ProxNetParams,
    frames: &[Vec<f64>],
    reference: usize,
    warps: &[Vec<Vec<f64>>],
    h: usize,
    w: usize,
    sigma: f64,
    step: f64,
) -> Vec<f64> {
    let n = h * w;
    let mut x_prev = vec![0.0; n * 3];
    let mut x = frames[reference].clone();
    for t in 0..p.s.len() {
        let wt = p.w[t] as f64;
        let u: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a + wt * (a - b)).collect();
        let mut z = vec![0.0; n * 3];
        for (m, y) in warps.iter().zip(frames) {
            for c in 0..3 {
                let mut res = vec![0.0; n];
                for r in 0..n {
                    res[r] = (0..n).map(|s| m[r][s] * u[s * 3 + c]).sum::<f64>() - y[r * 3 + c];
                }
                for s in 0..n {
                    z[s * 3 + c] += (0..n).map(|r| m[r][s] * res[r]).sum::<f64>();
                }
            }
        }
        let v: Vec<f64> = x.iter().zip(&z).map(|(a, g)| a - step * g).collect();
        let next = proxnet_forward(p, &v, h, w, sigma, p.s[t] as f64);
        x_prev = std::mem::replace(&mut x, next);
    }
    x
}
