use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Smallest noise level handed to the proximal network.
pub const MIN_PROX_SIGMA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    /// Per-sample variance `alpha * omega + beta^2` for clean intensity `omega`.
    Heteroskedastic { alpha: f64, beta: f64 },
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::Heteroskedastic { alpha: 0.0, beta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0 && sigma <= 1.0) => {
                Err(Error::invalid(format!("gaussian sigma must lie in (0, 1], got {sigma}")))
            }
            NoiseModel::Heteroskedastic { alpha, beta } if !(alpha >= 0.0 && beta >= 0.0) => {
                Err(Error::invalid(format!("alpha and beta must be non-negative, got {alpha}, {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Noise level handed to the prox: sigma itself, or the read-noise
    /// component `beta` for the signal-dependent model.
    pub fn prox_sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::Heteroskedastic { beta, .. } => beta.max(MIN_PROX_SIGMA),
        }
    }

    pub fn std_at(&self, omega: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::Heteroskedastic { alpha, beta } => (alpha * omega.max(0.0) + beta * beta).sqrt(),
        }
    }

    /// Gaussian level drawn from `{5, 7.5, ..., 25} / 255`.
    pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let step = rng.random_range(0..=8);
        NoiseModel::Gaussian {
            sigma: (5.0 + 2.5 * step as f64) / 255.0,
        }
    }

    /// `alpha` and `beta` each log-uniform on `[1e-4, 1e-2]`.
    pub fn sample_heteroskedastic<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let (lo, hi) = (1e-4f64.ln(), 1e-2f64.ln());
        NoiseModel::Heteroskedastic {
            alpha: rng.random_range(lo..hi).exp(),
            beta: rng.random_range(lo..hi).exp(),
        }
    }
}

pub fn add_noise<R: Rng + ?Sized>(img: &Image, noise: &NoiseModel, rng: &mut R) -> Image {
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let std = noise.std_at(v as f64);
            if std == 0.0 {
                v
            } else {
                let n: f64 = rng.sample(StandardNormal);
                (v as f64 + std * n) as f32
            }
        })
        .collect();
    Image::from_raw(img.height(), img.width(), img.channels(), data, img.space())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PixelSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_identity() {
        let img = Image::filled(4, 4, 3, 0.3, PixelSpace::LinearRgb);
        let out = add_noise(&img, &NoiseModel::none(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, img);
    }

    #[test]
    fn sampled_levels_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let NoiseModel::Gaussian { sigma } = NoiseModel::sample_gaussian(&mut rng) else { unreachable!() };
            let k = (sigma * 255.0 - 5.0) / 2.5;
            assert!((k - k.round()).abs() < 1e-9 && (0.0..=8.0).contains(&k.round()));
            let NoiseModel::Heteroskedastic { alpha, beta } = NoiseModel::sample_heteroskedastic(&mut rng) else {
                unreachable!()
            };
            assert!((1e-4..=1e-2).contains(&alpha) && (1e-4..=1e-2).contains(&beta));
        }
    }

    #[test]
    fn validation() {
        assert!(NoiseModel::Gaussian { sigma: 0.0 }.validate().is_err());
        assert!(NoiseModel::Gaussian { sigma: 1.5 }.validate().is_err());
        assert!(NoiseModel::Heteroskedastic { alpha: -1.0, beta: 0.0 }.validate().is_err());
        assert!(NoiseModel::none().validate().is_ok());
    }
}
