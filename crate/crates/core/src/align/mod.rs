//! Rigid alignment of burst frames by Enhanced Correlation Coefficient
//! maximisation, run coarse-to-fine on a Gaussian pyramid.

mod pyramid;

pub use pyramid::{gaussian_blur, gaussian_pyramid, max_levels, MIN_LEVEL_SIZE};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Burst, Image, PixelSpace};
use crate::ops::{demosaick_bilinear, image_center, AffineTransform, BayerPattern, TransformRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub levels: usize,
    /// Gaussian std (pixels) used both for pyramid construction and for
    /// pre-smoothing every level before correlation.
    pub blur_std: f64,
    pub max_iterations_per_level: usize,
    /// Stop a level once the ECC increment falls below this.
    pub epsilon: f64,
    /// Final ECC needed to report convergence.
    pub acceptance_threshold: f64,
    /// Exhaustive integer-translation search radius at the coarsest level,
    /// expressed in full-resolution pixels. Zero starts from identity.
    pub search_radius: usize,
    /// Layout assumed when aligning mosaicked frames.
    pub pattern: BayerPattern,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            blur_std: 1.0,
            max_iterations_per_level: 50,
            epsilon: 1e-6,
            acceptance_threshold: 0.9,
            search_radius: 12,
            pattern: BayerPattern::RGGB,
        }
    }
}

/// Outcome of aligning one frame. `transform` maps reference pixel
/// coordinates into the moving frame: `moving(T(p)) ≈ reference(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub transform: AffineTransform,
    pub final_ecc: f64,
    pub converged: bool,
}

impl AlignmentResult {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            transform: AffineTransform::about_image_center(0.0, 0.0, 0.0, height, width),
            final_ecc: 1.0,
            converged: true,
        }
    }

    /// Transform in the gather convention of the forward model, i.e. the
    /// warp that maps the latent (reference-aligned) image onto this frame.
    pub fn frame_transform(&self) -> AffineTransform {
        self.transform.inverse()
    }

    pub fn to_record(&self) -> TransformRecord {
        TransformRecord::from_transform(&self.frame_transform(), self.final_ecc, self.converged)
    }
}

/// Single-channel `f64` plane with precomputed central-difference gradients.
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Plane {
    fn new(img: &Image) -> Self {
        let (h, w) = (img.height(), img.width());
        let v: Vec<f64> = img.data().iter().map(|&a| a as f64).collect();
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (t, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
                gx[y * w + x] = (v[y * w + r] - v[y * w + l]) / (r - l).max(1) as f64;
                gy[y * w + x] = (v[b * w + x] - v[t * w + x]) / (b - t).max(1) as f64;
            }
        }
        Self { h, w, v, gx, gy }
    }

    /// Bilinear sample of value and gradient; `None` outside the grid.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.w - 1) as f64 && y <= (self.h - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.h.saturating_sub(2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let idx = [y0 * self.w + x0, y0 * self.w + x1, y1 * self.w + x0, y1 * self.w + x1];
        let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let lerp = |f: &[f64]| idx.iter().zip(&wts).map(|(&i, &wt)| wt * f[i]).sum::<f64>();
        Some((lerp(&self.v), lerp(&self.gx), lerp(&self.gy)))
    }

    fn variance(&self) -> f64 {
        let n = self.v.len() as f64;
        let mean = self.v.iter().sum::<f64>() / n;
        self.v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n
    }
}

fn luma_for_alignment(img: &Image, pattern: BayerPattern) -> Result<Image> {
    if img.space() == PixelSpace::MosaickedLinear {
        Ok(demosaick_bilinear(img, pattern)?.luma())
    } else {
        Ok(img.luma())
    }
}

/// Estimates the rigid motion between `moving` and `reference`.
pub fn estimate_alignment(moving: &Image, reference: &Image, cfg: &PyramidConfig) -> Result<AlignmentResult> {
    moving.ensure_same_dims(reference)?;
    let (h, w, _) = reference.dims();
    let levels = cfg.levels.clamp(1, max_levels(h, w));
    let level_cfg = PyramidConfig { levels, ..cfg.clone() };
    let mov = gaussian_pyramid(&luma_for_alignment(moving, cfg.pattern)?, &level_cfg)?;
    let refr = gaussian_pyramid(&luma_for_alignment(reference, cfg.pattern)?, &level_cfg)?;

    let base_mov = Plane::new(&mov[0]);
    let base_ref = Plane::new(&refr[0]);
    if base_ref.variance() < 1e-12 || base_mov.variance() < 1e-12 {
        return Err(Error::Degenerate("zero-variance image cannot be aligned".into()));
    }

    let coarsest = levels - 1;
    let scale = 0.5f64.powi(coarsest as i32);
    let mut transform = AffineTransform::about_image_center(0.0, 0.0, 0.0, h, w).rescaled(scale);

    let mut ecc = f64::NAN;
    let mut healthy = true;
    for level in (0..levels).rev() {
        let template = Plane::new(&gaussian_blur(&refr[level], cfg.blur_std));
        let image = Plane::new(&gaussian_blur(&mov[level], cfg.blur_std));
        if level == coarsest && cfg.search_radius > 0 {
            let radius = ((cfg.search_radius as f64 * scale).ceil() as isize).max(1);
            let (dx, dy) = translation_search(&template, &image, radius);
            transform = AffineTransform::with_center(0.0, dx as f64, dy as f64, transform.center());
        }
        let (t, e, ok) = ecc_level(&template, &image, transform, cfg);
        transform = t;
        ecc = e;
        healthy &= ok;
        if level > 0 {
            transform = transform.rescaled(2.0);
        }
    }
    let transform = transform.recentered(image_center(h, w));
    let converged = healthy && ecc.is_finite() && ecc >= cfg.acceptance_threshold;
    Ok(AlignmentResult {
        transform,
        final_ecc: if ecc.is_finite() { ecc } else { 0.0 },
        converged,
    })
}

/// Aligns every frame to the burst reference. The reference itself gets the
/// exact identity; failures are reported per frame, never for the burst.
pub fn align_burst(burst: &Burst, cfg: &PyramidConfig) -> Result<Vec<AlignmentResult>> {
    let (h, w, _) = burst.dims();
    let reference = burst.reference();
    burst
        .frames()
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            if i == burst.reference_index() {
                return Ok(AlignmentResult::identity(h, w));
            }
            match estimate_alignment(frame, reference, cfg) {
                Ok(r) => Ok(r),
                Err(Error::Degenerate(msg)) => {
                    warn!("frame {i}: {msg}");
                    Ok(AlignmentResult {
                        transform: AffineTransform::about_image_center(0.0, 0.0, 0.0, h, w),
                        final_ecc: 0.0,
                        converged: false,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Zero-mean normalised correlation of template pixels against `image`
/// sampled at the transformed positions, over the in-bounds region.
fn zncc(template: &Plane, image: &Plane, t: &AffineTransform) -> Option<f64> {
    let mut pairs = Vec::with_capacity(template.v.len());
    for y in 0..template.h {
        for x in 0..template.w {
            let (sx, sy) = t.apply(x as f64, y as f64);
            if let Some((v, _, _)) = image.sample(sx, sy) {
                pairs.push((template.v[y * template.w + x], v));
            }
        }
    }
    correlation(&pairs)
}

fn correlation(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 16 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mt, mi) = pairs.iter().fold((0.0, 0.0), |(a, b), &(t, i)| (a + t, b + i));
    let (mt, mi) = (mt / n, mi / n);
    let (mut tt, mut ii, mut ti) = (0.0, 0.0, 0.0);
    for &(t, i) in pairs {
        let (a, b) = (t - mt, i - mi);
        tt += a * a;
        ii += b * b;
        ti += a * b;
    }
    let denom = (tt * ii).sqrt();
    (denom > 0.0).then(|| ti / denom)
}

fn translation_search(template: &Plane, image: &Plane, radius: isize) -> (isize, isize) {
    let min_overlap = template.v.len() / 2;
    let mut best: (isize, isize) = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let mut pairs = Vec::with_capacity(template.v.len());
            for y in 0..template.h as isize {
                let sy = y + dy;
                if sy < 0 || sy >= image.h as isize {
                    continue;
                }
                for x in 0..template.w as isize {
                    let sx = x + dx;
                    if sx < 0 || sx >= image.w as isize {
                        continue;
                    }
                    pairs.push((
                        template.v[y as usize * template.w + x as usize],
                        image.v[sy as usize * image.w + sx as usize],
                    ));
                }
            }
            if pairs.len() < min_overlap {
                continue;
            }
            if let Some(score) = correlation(&pairs) {
                // prefer the smaller shift on ties
                let closer = dx.abs() + dy.abs() < best.0.abs() + best.1.abs();
                if score > best_score + 1e-12 || (score >= best_score - 1e-12 && closer) {
                    best_score = score;
                    best = (dx, dy);
                }
            }
        }
    }
    best
}

/// Forward-additive ECC over `(theta, dx, dy)` about `init`'s centre.
/// Returns the refined transform, its ECC and whether the iteration stayed
/// well posed.
fn ecc_level(
    template: &Plane,
    image: &Plane,
    init: AffineTransform,
    cfg: &PyramidConfig,
) -> (AffineTransform, f64, bool) {
    let center = init.center();
    let mut params = [init.rotation(), init.translation().0, init.translation().1];
    let make = |p: &[f64; 3]| AffineTransform::with_center(p[0], p[1], p[2], center);
    let mut last_ecc = f64::NEG_INFINITY;
    let mut ok = true;

    let n = template.v.len();
    let mut tv = Vec::with_capacity(n);
    let mut iv = Vec::with_capacity(n);
    let mut jac: Vec<[f64; 3]> = Vec::with_capacity(n);

    for _ in 0..cfg.max_iterations_per_level {
        let t = make(&params);
        let (s, c) = params[0].sin_cos();
        tv.clear();
        iv.clear();
        jac.clear();
        for y in 0..template.h {
            for x in 0..template.w {
                let (sx, sy) = t.apply(x as f64, y as f64);
                if let Some((v, gx, gy)) = image.sample(sx, sy) {
                    let (u, w) = (x as f64 - center.0, y as f64 - center.1);
                    let dtheta = gx * (-s * u - c * w) + gy * (c * u - s * w);
                    tv.push(template.v[y * template.w + x]);
                    iv.push(v);
                    jac.push([dtheta, gx, gy]);
                }
            }
        }
        if tv.len() < 16 {
            ok = false;
            break;
        }
        let m = tv.len() as f64;
        let (mt, mi) = (tv.iter().sum::<f64>() / m, iv.iter().sum::<f64>() / m);
        tv.iter_mut().for_each(|a| *a -= mt);
        iv.iter_mut().for_each(|a| *a -= mi);

        let mut hess = [[0.0f64; 3]; 3];
        let mut proj_i = [0.0f64; 3];
        let mut proj_t = [0.0f64; 3];
        let (mut tt, mut ii, mut ti) = (0.0, 0.0, 0.0);
        for k in 0..tv.len() {
            let g = jac[k];
            for a in 0..3 {
                for b in 0..3 {
                    hess[a][b] += g[a] * g[b];
                }
                proj_i[a] += g[a] * iv[k];
                proj_t[a] += g[a] * tv[k];
            }
            tt += tv[k] * tv[k];
            ii += iv[k] * iv[k];
            ti += tv[k] * iv[k];
        }
        let ecc = ti / (tt * ii).sqrt();
        let Some(hinv) = invert3(&hess) else {
            ok = false;
            break;
        };
        let hp_i = mat_vec(&hinv, &proj_i);
        let lambda_n = ii - dot3(&proj_i, &hp_i);
        let lambda_d = ti - dot3(&proj_t, &hp_i);
        if !(lambda_d > 0.0) || !ecc.is_finite() {
            ok = false;
            break;
        }
        let lambda = lambda_n / lambda_d;
        let mut err_proj = [0.0f64; 3];
        for k in 0..tv.len() {
            let e = lambda * tv[k] - iv[k];
            for a in 0..3 {
                err_proj[a] += jac[k][a] * e;
            }
        }
        let delta = mat_vec(&hinv, &err_proj);
        for a in 0..3 {
            params[a] += delta[a];
        }
        if !params.iter().all(|p| p.is_finite()) {
            ok = false;
            break;
        }
        if (ecc - last_ecc).abs() < cfg.epsilon {
            break;
        }
        last_ecc = ecc;
    }
    if !params.iter().all(|p| p.is_finite()) {
        params = [init.rotation(), init.translation().0, init.translation().1];
    }
    let t = make(&params);
    let ecc = zncc(template, image, &t).unwrap_or(f64::NAN);
    (t, ecc, ok)
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [dot3(&m[0], v), dot3(&m[1], v), dot3(&m[2], v)]
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    if !(det.abs() > 1e-12 * scale.powi(3)) {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            out[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) * inv_det;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{build_warp, Interpolation};
    use crate::train::scene::random_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn invert3_roundtrip() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = invert3(&m).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| m[r][k] * inv[k][c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(invert3(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).is_none());
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_scene(96, 96, &mut rng);
        let r = estimate_alignment(&img, &img, &PyramidConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.final_ecc - 1.0).abs() < 1e-6, "{}", r.final_ecc);
        assert!(r.transform.max_matrix_diff(&AffineTransform::identity()) < 1e-6);
    }

    #[test]
    fn recovers_pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scene = random_scene(160, 160, &mut rng);
        let truth = AffineTransform::about_image_center(0.0, 3.0, -2.0, 160, 160);
        let warp = build_warp(&truth, scene.dims(), Interpolation::Bilinear).unwrap();
        // crop away the empty border the zero-padded warp leaves behind
        let moving = warp.apply(&scene).unwrap().center_crop(128, 128).unwrap();
        let img = scene.center_crop(128, 128).unwrap();
        let r = estimate_alignment(&moving, &img, &PyramidConfig::default()).unwrap();
        let truth = AffineTransform::about_image_center(0.0, 3.0, -2.0, 128, 128);
        // moving(T(p)) ≈ img(p) means T is the inverse of the synthesis warp
        let err = r.transform.corner_error(&truth.inverse(), 128, 128);
        assert!(err < 0.1, "endpoint error {err}");
        assert!(r.frame_transform().corner_error(&truth, 128, 128) < 0.1);
    }

    #[test]
    fn degenerate_input_is_an_error() {
        let flat = Image::filled(64, 64, 3, 0.5, PixelSpace::LinearRgb);
        assert!(matches!(
            estimate_alignment(&flat, &flat, &PyramidConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn burst_reference_is_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_scene(64, 64, &mut rng);
        let burst = Burst::new(vec![img.clone(), img.clone(), img], 1).unwrap();
        let res = align_burst(&burst, &PyramidConfig::default()).unwrap();
        assert_eq!(res[1], AlignmentResult::identity(64, 64));
        for r in &res {
            assert!(r.converged);
            assert!(r.transform.max_matrix_diff(&AffineTransform::identity()) < 1e-6);
        }
        let single = Burst::new(vec![Image::filled(40, 40, 3, 0.1, PixelSpace::LinearRgb)], 0).unwrap();
        assert_eq!(align_burst(&single, &PyramidConfig::default()).unwrap().len(), 1);
    }
}
