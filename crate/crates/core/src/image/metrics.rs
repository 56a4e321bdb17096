use crate::error::{Error, Result};

use super::{Image, PixelSpace};

/// Mean squared error over every sample, accumulated in `f64`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in decibels. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// PSNR after clamping both linear images to `[0, 1]` and applying the sRGB
/// transfer curve.
pub fn psnr_srgb(a: &Image, b: &Image) -> Result<f64> {
    let to_srgb = |img: &Image| -> Result<Image> {
        img.clamp01().with_space(PixelSpace::LinearRgb)?.linrgb_to_srgb()
    };
    psnr(&to_srgb(a)?, &to_srgb(b)?, 1.0)
}
