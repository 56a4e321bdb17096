use crate::error::{Error, Result};
use crate::image::{Image, PixelSpace};

use super::PyramidConfig;

/// Smallest short side allowed for any decimated pyramid level.
pub const MIN_LEVEL_SIZE: usize = 32;

/// Largest level count whose coarsest decimated level keeps at least
/// [`MIN_LEVEL_SIZE`] pixels on the short side (always at least 1).
pub fn max_levels(height: usize, width: usize) -> usize {
    let mut short = height.min(width);
    let mut levels = 1;
    while short / 2 >= MIN_LEVEL_SIZE {
        short /= 2;
        levels += 1;
    }
    levels
}

/// Level 0 is the (luma) input; level `k + 1` blurs level `k` with a Gaussian
/// of `blur_std` pixels and keeps every second row and column.
pub fn gaussian_pyramid(img: &Image, cfg: &PyramidConfig) -> Result<Vec<Image>> {
    if cfg.levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    if cfg.levels > max_levels(img.height(), img.width()) {
        return Err(Error::invalid(format!(
            "{}x{} image too small for {} pyramid levels",
            img.height(),
            img.width(),
            cfg.levels
        )));
    }
    let mut levels = vec![img.luma()];
    for _ in 1..cfg.levels {
        let blurred = gaussian_blur(levels.last().expect("non-empty"), cfg.blur_std);
        levels.push(decimate(&blurred));
    }
    Ok(levels)
}

fn gaussian_kernel(std: f64) -> Vec<f32> {
    let radius = (3.0 * std).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // half-sample symmetric: -1 -> 0, n -> n - 1
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur of a single-channel image with symmetric
/// boundary extension. `std <= 0` returns the input.
pub fn gaussian_blur(img: &Image, std: f64) -> Image {
    if std <= 0.0 {
        return img.clone();
    }
    let (h, w, c) = img.dims();
    debug_assert_eq!(c, 1);
    let k = gaussian_kernel(std);
    let r = (k.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * src[y * w + reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    Image::from_raw(h, w, 1, out, PixelSpace::LinearRgb)
}

fn decimate(img: &Image) -> Image {
    let (h, w) = (img.height() / 2, img.width() / 2);
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| img.get(2 * y, 2 * x, 0))
        .collect();
    Image::from_raw(h, w, 1, data, PixelSpace::LinearRgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_is_input() {
        let img = Image::filled(20, 20, 1, 0.3, PixelSpace::LinearRgb);
        let cfg = PyramidConfig { levels: 1, ..Default::default() };
        let p = gaussian_pyramid(&img, &cfg).unwrap();
        assert_eq!(p, vec![img]);
    }

    #[test]
    fn halving_sizes_and_constants() {
        let img = Image::filled(128, 128, 3, 0.4, PixelSpace::LinearRgb);
        let cfg = PyramidConfig { levels: 3, ..Default::default() };
        let p = gaussian_pyramid(&img, &cfg).unwrap();
        let sizes: Vec<_> = p.iter().map(|l| (l.height(), l.width())).collect();
        assert_eq!(sizes, vec![(128, 128), (64, 64), (32, 32)]);
        for level in &p {
            assert!(level.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn too_small_for_levels() {
        let img = Image::filled(64, 64, 1, 0.0, PixelSpace::LinearRgb);
        assert_eq!(max_levels(64, 64), 2);
        assert_eq!(max_levels(16, 100), 1);
        let cfg = PyramidConfig { levels: 3, ..Default::default() };
        assert!(gaussian_pyramid(&img, &cfg).is_err());
    }

    #[test]
    fn blur_preserves_mass_for_symmetric_boundary() {
        let mut data = vec![0.0f32; 15 * 15];
        data[7 * 15 + 7] = 1.0;
        let img = Image::new(15, 15, 1, data, PixelSpace::LinearRgb).unwrap();
        let b = gaussian_blur(&img, 1.0);
        assert!((b.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(b.get(7, 7, 0) > b.get(7, 8, 0));
        assert!((b.get(7, 8, 0) - b.get(8, 7, 0)).abs() < 1e-7);
    }
}
