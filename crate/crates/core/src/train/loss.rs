use crate::error::Result;
use crate::image::{Image, PixelSpace};

/// Mean absolute error and its gradient `sign(x - gt) / N` (`sign(0) = 0`).
pub fn l1_loss(x: &Image, gt: &Image) -> Result<(f64, Image)> {
    x.ensure_same_dims(gt)?;
    let (loss, grad) = l1_raw(x.data(), gt.data());
    let (h, w, c) = x.dims();
    Ok((loss, Image::from_raw(h, w, c, grad, PixelSpace::LinearRgb)))
}

pub(crate) fn l1_raw(x: &[f32], gt: &[f32]) -> (f64, Vec<f32>) {
    let n = x.len() as f64;
    let inv = (1.0 / n) as f32;
    let mut total = 0.0f64;
    let grad = x
        .iter()
        .zip(gt)
        .map(|(a, b)| {
            let d = a - b;
            total += (d as f64).abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_images_have_zero_loss() {
        let a = Image::filled(3, 3, 3, 0.4, PixelSpace::LinearRgb);
        let (l, g) = l1_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset() {
        let a = Image::filled(4, 5, 3, 0.5, PixelSpace::LinearRgb);
        let b = Image::filled(4, 5, 3, 0.3, PixelSpace::LinearRgb);
        let (l, g) = l1_loss(&a, &b).unwrap();
        assert!((l - 0.2).abs() < 1e-6);
        assert!(g.data().iter().all(|&v| v == 1.0 / 60.0));
        assert!(l1_loss(&a, &Image::zeros(4, 4, 3, PixelSpace::LinearRgb)).is_err());
    }
}
