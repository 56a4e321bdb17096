use crate::error::{Error, Result};
use crate::image::{Burst, Image, PixelSpace};
use crate::ops::{build_warp, demosaick_bilinear, AffineTransform, DegradationOp, Interpolation};

/// Registers every frame onto the reference grid and averages, counting only
/// pixels whose interpolation stencil lies inside the frame. `transforms`
/// are frame warps in the forward-model convention (latent to frame).
/// Mosaicked frames are demosaicked first.
pub fn aligned_average(burst: &Burst, transforms: &[AffineTransform], op: DegradationOp) -> Result<Image> {
    if transforms.len() != burst.len() {
        return Err(Error::dims(burst.len(), transforms.len()));
    }
    let dims = burst.dims();
    let (h, w, c) = dims;
    let mut sum = vec![0.0f64; h * w * c];
    let mut count = vec![0u32; h * w];
    let mut fallback = None;
    for (i, (frame, t)) in burst.frames().iter().zip(transforms).enumerate() {
        let full = match op {
            DegradationOp::Identity => frame.clone(),
            DegradationOp::Cfa(p) => demosaick_bilinear(frame, p)?,
        };
        let warp = build_warp(&t.inverse(), dims, Interpolation::Bilinear)?;
        let registered = warp.apply(&full)?;
        for r in 0..h * w {
            if warp.row(r).0.is_empty() {
                continue;
            }
            count[r] += 1;
            for ch in 0..c {
                sum[r * c + ch] += registered.data()[r * c + ch] as f64;
            }
        }
        if i == burst.reference_index() {
            fallback = Some(full);
        }
    }
    let fallback = fallback.expect("burst has a reference");
    let data = (0..h * w * c)
        .map(|k| match count[k / c] {
            0 => fallback.data()[k],
            n => (sum[k] / n as f64) as f32,
        })
        .collect();
    Ok(Image::from_raw(h, w, c, data, PixelSpace::LinearRgb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_average_to_themselves() {
        let data: Vec<f32> = (0..5 * 6 * 3).map(|i| i as f32 / 90.0).collect();
        let img = Image::new(5, 6, 3, data, PixelSpace::LinearRgb).unwrap();
        let burst = Burst::new(vec![img.clone(); 3], 2).unwrap();
        let ids = vec![AffineTransform::identity(); 3];
        let avg = aligned_average(&burst, &ids, DegradationOp::Identity).unwrap();
        for (a, b) in avg.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
