use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::{add_noise, NoiseModel};
use crate::error::{Error, Result};
use crate::image::{Burst, Image, PixelSpace};
use crate::ops::{build_warp, AffineTransform, BayerPattern, DegradationOp, Interpolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Denoise,
    Demosaick { pattern: BayerPattern },
}

impl Task {
    pub fn degradation(&self) -> DegradationOp {
        match *self {
            Task::Denoise => DegradationOp::Identity,
            Task::Demosaick { pattern } => DegradationOp::Cfa(pattern),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augment {
    pub flips: bool,
    pub color_jitter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBurstSpec {
    pub burst_size: usize,
    /// Per-axis bound in pixels.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub crop: usize,
    pub task: Task,
    pub augment: Augment,
    /// Forces identity transforms for every frame.
    pub zero_motion: bool,
}

impl Default for SyntheticBurstSpec {
    fn default() -> Self {
        Self {
            burst_size: 8,
            max_translation: 10.0,
            max_rotation_deg: 2.0,
            crop: 128,
            task: Task::Denoise,
            augment: Augment::default(),
            zero_motion: false,
        }
    }
}

impl SyntheticBurstSpec {
    /// Border kept around the crop so that every warped frame samples real
    /// content: translation plus the corner displacement of the rotation,
    /// plus one pixel for the bilinear stencil.
    pub fn margin(&self) -> usize {
        let half_diag = self.crop as f64 * std::f64::consts::FRAC_1_SQRT_2;
        let rot = 2.0 * (self.max_rotation_deg.to_radians() / 2.0).sin() * half_diag;
        (self.max_translation + rot).ceil() as usize + 1
    }

    /// Smallest ground-truth side length accepted by [`synthesize_burst`].
    pub fn min_source_size(&self) -> usize {
        self.crop + 2 * self.margin()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBurst {
    pub burst: Burst,
    /// Per-frame warps in the forward-model convention on crop coordinates.
    pub transforms: Vec<AffineTransform>,
    /// Ground truth cropped to the frame size.
    pub gt: Image,
}

fn color_jitter<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    let gains: Vec<f32> = (0..img.channels()).map(|_| rng.random_range(0.8f32..=1.2)).collect();
    let c = img.channels();
    let data = img.data().iter().enumerate().map(|(i, v)| v * gains[i % c]).collect();
    Image::from_raw(img.height(), img.width(), c, data, img.space())
}

pub fn synthesize_burst<R: Rng + ?Sized>(
    gt: &Image,
    spec: &SyntheticBurstSpec,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SyntheticBurst> {
    noise.validate()?;
    if spec.burst_size == 0 || spec.crop == 0 {
        return Err(Error::invalid("burst size and crop must be positive"));
    }
    if gt.channels() != 3 {
        return Err(Error::dims("3 channels", gt.channels()));
    }
    let side = spec.min_source_size();
    if gt.height() < side || gt.width() < side {
        return Err(Error::invalid(format!(
            "ground truth {}x{} smaller than crop {} plus margins ({side})",
            gt.height(),
            gt.width(),
            spec.crop
        )));
    }

    let mut src = gt.center_crop(side, side)?.with_space(PixelSpace::LinearRgb)?;
    if spec.augment.flips {
        if rng.random_bool(0.5) {
            src = src.flip_horizontal();
        }
        if rng.random_bool(0.5) {
            src = src.flip_vertical();
        }
    }
    if spec.augment.color_jitter {
        src = color_jitter(&src, rng);
    }

    let b = spec.burst_size;
    let crop = spec.crop;
    let op = spec.task.degradation();
    let mut frames = Vec::with_capacity(b);
    let mut transforms = Vec::with_capacity(b);
    for i in 0..b {
        let reference = i + 1 == b;
        let (theta, dx, dy) = if reference || spec.zero_motion {
            (0.0, 0.0, 0.0)
        } else {
            let r = spec.max_rotation_deg.to_radians();
            let t = spec.max_translation;
            (rng.random_range(-r..=r), rng.random_range(-t..=t), rng.random_range(-t..=t))
        };
        let warped = if theta == 0.0 && dx == 0.0 && dy == 0.0 {
            src.clone()
        } else {
            let t = AffineTransform::about_image_center(theta, dx, dy, side, side);
            build_warp(&t, src.dims(), Interpolation::Bilinear)?.apply(&src)?
        };
        let frame = op.apply(&warped.center_crop(crop, crop)?)?;
        let noisy = add_noise(&frame, noise, rng);
        // Unsampled CFA sites stay zero.
        frames.push(op.apply(&noisy)?.with_space(frame.space())?);
        transforms.push(AffineTransform::about_image_center(theta, dx, dy, crop, crop));
    }
    Ok(SyntheticBurst {
        burst: Burst::new(frames, b - 1)?,
        transforms,
        gt: src.center_crop(crop, crop)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::scene::random_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(b: usize) -> SyntheticBurstSpec {
        SyntheticBurstSpec {
            burst_size: b,
            crop: 32,
            ..Default::default()
        }
    }

    #[test]
    fn single_frame_is_degraded_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = spec(1);
        let gt = random_scene(s.min_source_size(), s.min_source_size(), &mut rng);
        let out = synthesize_burst(&gt, &s, &NoiseModel::none(), &mut rng).unwrap();
        assert_eq!(out.burst.len(), 1);
        assert_eq!(out.burst.reference().data(), out.gt.data());
        assert_eq!(out.transforms[0].translation(), (0.0, 0.0));
        assert_eq!(out.transforms[0].rotation(), 0.0);
    }

    #[test]
    fn zero_motion_without_noise_repeats_gt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = SyntheticBurstSpec { zero_motion: true, ..spec(4) };
        let gt = random_scene(80, 90, &mut rng);
        let out = synthesize_burst(&gt, &s, &NoiseModel::none(), &mut rng).unwrap();
        for f in out.burst.frames() {
            assert_eq!(f.data(), out.gt.data());
        }
    }

    #[test]
    fn reference_is_last_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = spec(5);
        let gt = random_scene(80, 80, &mut rng);
        let out = synthesize_burst(&gt, &s, &NoiseModel::Gaussian { sigma: 0.05 }, &mut rng).unwrap();
        assert_eq!(out.burst.reference_index(), 4);
        assert_eq!(out.transforms[4].rotation(), 0.0);
        assert_eq!(out.transforms[4].translation(), (0.0, 0.0));
    }

    #[test]
    fn mosaicked_frames_have_zero_unsampled_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SyntheticBurstSpec {
            task: Task::Demosaick { pattern: BayerPattern::RGGB },
            ..spec(3)
        };
        let gt = random_scene(80, 80, &mut rng);
        let out = synthesize_burst(&gt, &s, &NoiseModel::Gaussian { sigma: 0.05 }, &mut rng).unwrap();
        for f in out.burst.frames() {
            assert_eq!(f.space(), PixelSpace::MosaickedLinear);
            for y in 0..32 {
                for x in 0..32 {
                    let keep = BayerPattern::RGGB.channel_at(y, x);
                    for c in 0..3 {
                        if c != keep {
                            assert_eq!(f.get(y, x, c), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn too_small_source_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = spec(2);
        let gt = random_scene(s.min_source_size() - 1, 200, &mut rng);
        assert!(synthesize_burst(&gt, &s, &NoiseModel::none(), &mut rng).is_err());
    }
}
