use super::ProxNetParams;
use crate::error::{Error, Result};
use crate::image::Image;

/// Projection radius `e^s * sigma * sqrt(n - 1)`.
pub fn projection_radius(sigma: f64, s_t: f64, n: usize) -> f64 {
    s_t.exp() * sigma * ((n as f64) - 1.0).max(0.0).sqrt()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise level must be positive, got {sigma}")))
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Scales `residual` onto the ball of radius [`projection_radius`] when it
/// lies outside; leaves it untouched otherwise.
pub fn project_l2(residual: &Image, sigma: f64, s_t: f64) -> Result<Image> {
    check_sigma(sigma)?;
    let theta = projection_radius(sigma, s_t, residual.len());
    let scale = theta / l2(residual.data()).max(theta);
    Ok(residual.map(|v| (v as f64 * scale) as f32))
}

fn hwc_to_chw(src: &[f32], hw: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for (p, px) in src.chunks_exact(c).enumerate() {
        for (ch, v) in px.iter().enumerate() {
            out[ch * hw + p] = *v;
        }
    }
    out
}

fn chw_to_hwc(src: &[f32], hw: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for (p, px) in out.chunks_exact_mut(c).enumerate() {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = src[ch * hw + p];
        }
    }
    out
}

fn prelu(pre: &[f32], slope: &[f32], hw: usize) -> Vec<f32> {
    let mut out = pre.to_vec();
    for (plane, &a) in out.chunks_exact_mut(hw).zip(slope) {
        for v in plane {
            if *v <= 0.0 {
                *v *= a;
            }
        }
    }
    out
}

/// Turns `grad` (w.r.t. the activation) into the gradient w.r.t. the
/// pre-activation in place and accumulates the slope gradient.
fn prelu_backward(pre: &[f32], slope: &[f32], hw: usize, grad: &mut [f32], grad_slope: &mut [f32]) {
    for (((g, p), &a), gs) in grad.chunks_exact_mut(hw).zip(pre.chunks_exact(hw)).zip(slope).zip(grad_slope) {
        let mut acc = 0.0f32;
        for (gv, &pv) in g.iter_mut().zip(p) {
            if pv <= 0.0 {
                acc += *gv * pv;
                *gv *= a;
            }
        }
        *gs += acc;
    }
}

/// Intermediates kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// Input, planar.
    x: Vec<f32>,
    a0: Vec<f32>,
    /// Block inputs `h_0..h_D`; the last one feeds the output conv.
    hs: Vec<Vec<f32>>,
    c1: Vec<Vec<f32>>,
    p1: Vec<Vec<f32>>,
    c2: Vec<Vec<f32>>,
    /// Unprojected residual, planar.
    r: Vec<f32>,
    norm: f64,
    theta: f64,
}

impl ForwardCache {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn residual_norm(&self) -> f64 {
        self.norm
    }

    pub fn radius(&self) -> f64 {
        self.theta
    }

    /// True when the residual was rescaled by the projection.
    pub fn projected(&self) -> bool {
        self.norm > self.theta
    }
}

fn check_input(p: &ProxNetParams, h: usize, w: usize, c: usize) -> Result<()> {
    if c != 3 {
        return Err(Error::dims("3 channels", format!("{c} channels")));
    }
    let min = p.config.min_size();
    if h < min || w < min {
        return Err(Error::invalid(format!("input {h}x{w} smaller than the {min}px padding limit")));
    }
    Ok(())
}

/// Forward pass on interleaved 3-channel data. Inputs are validated by the
/// public wrappers.
pub(crate) fn forward_raw(p: &ProxNetParams, noisy: &[f32], h: usize, w: usize, sigma: f64, s_t: f64) -> (Vec<f32>, ForwardCache) {
    let hw = h * w;
    let f = p.config.filters;
    let mut cols = Vec::new();
    let x = hwc_to_chw(noisy, hw, 3);

    let mut a0 = vec![0.0; f * hw];
    p.input.forward(&x, h, w, &mut a0, &mut cols);
    let mut hs = vec![prelu(&a0, &p.input_slope, hw)];
    let (mut c1s, mut p1s, mut c2s) = (Vec::new(), Vec::new(), Vec::new());
    for b in &p.blocks {
        let hin = hs.last().unwrap();
        let mut c1 = vec![0.0; f * hw];
        b.conv1.forward(hin, h, w, &mut c1, &mut cols);
        let p1 = prelu(&c1, &b.slope1, hw);
        let mut c2 = vec![0.0; f * hw];
        b.conv2.forward(&p1, h, w, &mut c2, &mut cols);
        let mut hout = prelu(&c2, &b.slope2, hw);
        hout.iter_mut().zip(hin).for_each(|(o, i)| *o += i);
        c1s.push(c1);
        p1s.push(p1);
        c2s.push(c2);
        hs.push(hout);
    }
    let mut r = vec![0.0; 3 * hw];
    p.output.forward(hs.last().unwrap(), h, w, &mut r, &mut cols);

    let theta = projection_radius(sigma, s_t, 3 * hw);
    let norm = l2(&r);
    let scale = (theta / norm.max(theta)) as f32;
    let out_planar: Vec<f32> = x.iter().zip(&r).map(|(xv, rv)| xv - scale * rv).collect();
    let out = chw_to_hwc(&out_planar, hw, 3);
    let cache = ForwardCache {
        height: h,
        width: w,
        x,
        a0,
        hs,
        c1: c1s,
        p1: p1s,
        c2: c2s,
        r,
        norm,
        theta,
    };
    (out, cache)
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct ProxGradients {
    /// Parameter gradients; `s` and `w` stay zero here, see `s_t`.
    pub params: ProxNetParams,
    /// Gradient w.r.t. the noisy input, interleaved like the input.
    pub input: Vec<f32>,
    /// Gradient w.r.t. the projection log-scale used in the forward pass.
    pub s_t: f64,
}

/// Backward pass accumulating parameter gradients into `grads`; returns the
/// input gradient (interleaved) and the `s_t` gradient.
pub(crate) fn backward_raw(p: &ProxNetParams, cache: &ForwardCache, upstream: &[f32], grads: &mut ProxNetParams) -> (Vec<f32>, f64) {
    let (h, w) = (cache.height, cache.width);
    let hw = h * w;
    let f = p.config.filters;
    let mut cols = Vec::new();
    let g_out = hwc_to_chw(upstream, hw, 3);

    // out = x - scale(r) * r
    let mut g_x = g_out.clone();
    let g_proj: Vec<f32> = g_out.iter().map(|v| -v).collect();
    let (g_r, g_s) = if cache.norm > cache.theta {
        let n = cache.norm;
        let rg: f64 = cache.r.iter().zip(&g_proj).map(|(a, b)| *a as f64 * *b as f64).sum();
        let a = cache.theta / n;
        let b = a * rg / (n * n);
        let g_r = cache.r.iter().zip(&g_proj).map(|(rv, gv)| (a * *gv as f64 - b * *rv as f64) as f32).collect();
        (g_r, cache.theta * rg / n)
    } else {
        (g_proj, 0.0)
    };

    let mut g_h = vec![0.0; f * hw];
    p.output.backward(cache.hs.last().unwrap(), h, w, &g_r, &mut grads.output, Some(&mut g_h), &mut cols);

    for (i, b) in p.blocks.iter().enumerate().rev() {
        let gb = &mut grads.blocks[i];
        // h_out = h_in + prelu(c2)
        let mut g_c2 = g_h.clone();
        prelu_backward(&cache.c2[i], &b.slope2, hw, &mut g_c2, &mut gb.slope2);
        let mut g_p1 = vec![0.0; f * hw];
        b.conv2.backward(&cache.p1[i], h, w, &g_c2, &mut gb.conv2, Some(&mut g_p1), &mut cols);
        prelu_backward(&cache.c1[i], &b.slope1, hw, &mut g_p1, &mut gb.slope1);
        b.conv1.backward(&cache.hs[i], h, w, &g_p1, &mut gb.conv1, Some(&mut g_h), &mut cols);
    }

    prelu_backward(&cache.a0, &p.input_slope, hw, &mut g_h, &mut grads.input_slope);
    p.input.backward(&cache.x, h, w, &g_h, &mut grads.input, Some(&mut g_x), &mut cols);
    (chw_to_hwc(&g_x, hw, 3), g_s)
}

pub fn forward(p: &ProxNetParams, noisy: &Image, sigma: f64, s_t: f64) -> Result<Image> {
    forward_cached(p, noisy, sigma, s_t).map(|(img, _)| img)
}

pub fn forward_cached(p: &ProxNetParams, noisy: &Image, sigma: f64, s_t: f64) -> Result<(Image, ForwardCache)> {
    check_sigma(sigma)?;
    let (h, w, c) = noisy.dims();
    check_input(p, h, w, c)?;
    let (out, cache) = forward_raw(p, noisy.data(), h, w, sigma, s_t);
    Ok((Image::from_raw(h, w, 3, out, noisy.space()), cache))
}

pub fn backward(p: &ProxNetParams, cache: &ForwardCache, upstream: &Image) -> Result<ProxGradients> {
    let (h, w) = cache.dims();
    if upstream.dims() != (h, w, 3) {
        return Err(Error::dims((h, w, 3), upstream.dims()));
    }
    let mut grads = p.zeros_like();
    let (input, s_t) = backward_raw(p, cache, upstream.data(), &mut grads);
    Ok(ProxGradients { params: grads, input, s_t })
}

/// Stateful wrapper pairing one forward pass with its backward pass.
#[derive(Debug, Default)]
pub struct ProxNetTape {
    cache: Option<ForwardCache>,
}

impl ProxNetTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, p: &ProxNetParams, noisy: &Image, sigma: f64, s_t: f64) -> Result<Image> {
        let (out, cache) = forward_cached(p, noisy, sigma, s_t)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Consumes the cached intermediates.
    pub fn backward(&mut self, p: &ProxNetParams, upstream: &Image) -> Result<ProxGradients> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        backward(p, &cache, upstream)
    }
}
