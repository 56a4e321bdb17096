use crate::error::Result;
use crate::image::{Image, PixelSpace};

use super::BayerPattern;

/// Bilinear demosaicking by normalised convolution: each missing sample is
/// the weighted mean of same-channel samples in its 3x3 neighbourhood
/// (cross kernel for green, box-like kernel for red/blue). Sampled sites are
/// kept as-is; borders renormalise over the available neighbours.
pub fn demosaick_bilinear(mosaic: &Image, pattern: BayerPattern) -> Result<Image> {
    super::DegradationOp::Cfa(pattern).check_channels(mosaic.channels())?;
    let (h, w, _) = mosaic.dims();
    let src = mosaic.data();
    let mut out = vec![0.0f32; src.len()];
    const GREEN: [[f32; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]];
    const RED_BLUE: [[f32; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
    for y in 0..h {
        for x in 0..w {
            let here = pattern.channel_at(y, x);
            for ch in 0..3 {
                let idx = (y * w + x) * 3 + ch;
                if ch == here {
                    out[idx] = src[idx];
                    continue;
                }
                let kernel = if ch == 1 { &GREEN } else { &RED_BLUE };
                let (mut acc, mut norm) = (0.0f32, 0.0f32);
                for (ky, row) in kernel.iter().enumerate() {
                    let yy = y as isize + ky as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for (kx, &k) in row.iter().enumerate() {
                        let xx = x as isize + kx as isize - 1;
                        if k == 0.0 || xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        if pattern.channel_at(yy, xx) == ch {
                            acc += k * src[(yy * w + xx) * 3 + ch];
                            norm += k;
                        }
                    }
                }
                out[idx] = if norm > 0.0 { acc / norm } else { 0.0 };
            }
        }
    }
    Ok(Image::from_raw(h, w, 3, out, PixelSpace::LinearRgb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::DegradationOp;

    #[test]
    fn constant_colour_is_reproduced() {
        let gt = Image::new(7, 9, 3, [0.2f32, 0.5, 0.8].repeat(63), PixelSpace::LinearRgb).unwrap();
        let mosaic = DegradationOp::Cfa(BayerPattern::RGGB).apply(&gt).unwrap();
        let out = demosaick_bilinear(&mosaic, BayerPattern::RGGB).unwrap();
        for (a, b) in out.data().iter().zip(gt.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_ramp_is_exact_in_interior() {
        let (h, w) = (8, 10);
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                // distinct plane per channel
                data.extend([0.01 * x as f32 + 0.02 * y as f32, 0.5 - 0.01 * y as f32, 0.03 * x as f32]);
            }
        }
        let gt = Image::new(h, w, 3, data, PixelSpace::LinearRgb).unwrap();
        for pattern in [BayerPattern::RGGB, BayerPattern { offset_y: 1, offset_x: 0 }] {
            let mosaic = DegradationOp::Cfa(pattern).apply(&gt).unwrap();
            let out = demosaick_bilinear(&mosaic, pattern).unwrap();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    for c in 0..3 {
                        assert!((out.get(y, x, c) - gt.get(y, x, c)).abs() < 1e-6, "({y},{x},{c})");
                    }
                }
            }
        }
    }
}
