use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, PixelSpace};
use crate::real::Real;

/// RGGB Bayer layout shifted by a 2x2 offset. With zero offset pixel
/// `(0, 0)` samples red, `(0, 1)` and `(1, 0)` green, `(1, 1)` blue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BayerPattern {
    pub offset_y: u8,
    pub offset_x: u8,
}

impl BayerPattern {
    pub const RGGB: BayerPattern = BayerPattern {
        offset_y: 0,
        offset_x: 0,
    };

    #[inline]
    pub fn channel_at(&self, y: usize, x: usize) -> usize {
        let yy = (y + self.offset_y as usize) % 2;
        let xx = (x + self.offset_x as usize) % 2;
        match (yy, xx) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        }
    }
}

/// The degradation `H` of the observation model: identity (denoising) or a
/// colour filter array (demosaicking). Both are binary diagonal, so the
/// adjoint equals the forward map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationOp {
    Identity,
    Cfa(BayerPattern),
}

impl DegradationOp {
    pub fn check_channels(&self, channels: usize) -> Result<()> {
        match self {
            DegradationOp::Cfa(_) if channels != 3 => Err(Error::invalid(format!(
                "colour filter array needs 3 channels, got {channels}"
            ))),
            _ => Ok(()),
        }
    }

    /// In-place `H` on interleaved 3-channel samples of a `height x width`
    /// grid.
    pub fn apply_in_place<T: Real>(&self, width: usize, data: &mut [T]) {
        if let DegradationOp::Cfa(pattern) = self {
            for (i, px) in data.chunks_exact_mut(3).enumerate() {
                let keep = pattern.channel_at(i / width, i % width);
                for (ch, v) in px.iter_mut().enumerate() {
                    if ch != keep {
                        *v = T::zero();
                    }
                }
            }
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check_channels(x.channels())?;
        let mut out = x.clone();
        self.apply_in_place(x.width(), out.data_mut());
        if matches!(self, DegradationOp::Cfa(_)) {
            out = out.with_space(PixelSpace::MosaickedLinear)?;
        }
        Ok(out)
    }

    pub fn apply_adjoint(&self, v: &Image) -> Result<Image> {
        self.apply(v)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DegradationOp::Identity)
    }
}

pub fn apply_degradation(op: &DegradationOp, x: &Image) -> Result<Image> {
    op.apply(x)
}

pub fn apply_degradation_adjoint(op: &DegradationOp, v: &Image) -> Result<Image> {
    op.apply_adjoint(v)
}
