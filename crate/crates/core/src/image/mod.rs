//! Image containers, pixel-space conversion, cropping and quality metrics.
//!
//! Pixels are stored as `f32` in raster order with interleaved channels
//! (`data[(y * width + x) * channels + c]`), nominally in `[0, 1]`.

mod io;
mod metrics;

pub use io::{load_image, load_native, save_native, save_png, save_png16};
pub use metrics::{mse, psnr, psnr_srgb};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSpace {
    LinearRgb,
    Srgb,
    /// Linear intensities sampled through a colour filter array: three
    /// channels, zeros wherever the pattern did not sample.
    MosaickedLinear,
}

impl PixelSpace {
    pub fn tag(self) -> u8 {
        match self {
            PixelSpace::LinearRgb => 0,
            PixelSpace::Srgb => 1,
            PixelSpace::MosaickedLinear => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PixelSpace::LinearRgb),
            1 => Some(PixelSpace::Srgb),
            2 => Some(PixelSpace::MosaickedLinear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    space: PixelSpace,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        space: PixelSpace,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if space == PixelSpace::MosaickedLinear && channels != 3 {
            return Err(Error::invalid("mosaicked images carry exactly 3 channels"));
        }
        if data.len() != height * width * channels {
            return Err(Error::dims(height * width * channels, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            space,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, space: PixelSpace) -> Self {
        Self::filled(height, width, channels, 0.0, space)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32, space: PixelSpace) -> Self {
        assert!(value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
            space,
        }
    }

    /// Builds an image from data produced inside the crate; non-finite
    /// values are a bug and trip a debug assertion.
    pub(crate) fn from_raw(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        space: PixelSpace,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite pixel data");
        Self {
            height,
            width,
            channels,
            data,
            space,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn space(&self) -> PixelSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn with_space(mut self, space: PixelSpace) -> Result<Self> {
        if space == PixelSpace::MosaickedLinear && self.channels != 3 {
            return Err(Error::invalid("mosaicked images carry exactly 3 channels"));
        }
        self.space = space;
        Ok(self)
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Applies `f` to every sample. Panics if `f` yields a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite sample");
        Image::from_raw(
            self.height,
            self.width,
            self.channels,
            data,
            self.space,
        )
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Euclidean norm over all samples, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Rec. 601 luma `0.299 R + 0.587 G + 0.114 B`; single-channel images are
    /// returned as-is.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        Image::from_raw(self.height, self.width, 1, data, PixelSpace::LinearRgb)
    }

    /// Central `h x w` region; offsets are `floor((dim - crop) / 2)`.
    pub fn center_crop(&self, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || h > self.height || w > self.width {
            return Err(Error::invalid(format!(
                "cannot crop {h}x{w} from {}x{}",
                self.height, self.width
            )));
        }
        let (oy, ox) = ((self.height - h) / 2, (self.width - w) / 2);
        self.crop(oy, ox, h, w)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "crop {h}x{w}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image::from_raw(h, w, c, data, self.space))
    }

    pub fn flip_horizontal(&self) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let start = (y * self.width + x) * c;
                data.extend_from_slice(&self.data[start..start + c]);
            }
        }
        Image::from_raw(self.height, self.width, c, data, self.space)
    }

    pub fn flip_vertical(&self) -> Image {
        let row = self.width * self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for y in (0..self.height).rev() {
            data.extend_from_slice(&self.data[y * row..(y + 1) * row]);
        }
        Image::from_raw(self.height, self.width, self.channels, data, self.space)
    }

    /// Applies the sRGB transfer curve to a linear image.
    pub fn linrgb_to_srgb(&self) -> Result<Image> {
        if self.space != PixelSpace::LinearRgb {
            return Err(Error::WrongSpace {
                expected: PixelSpace::LinearRgb,
                actual: self.space,
            });
        }
        let mut out = self.map(|v| srgb_encode(v as f64) as f32);
        out.space = PixelSpace::Srgb;
        Ok(out)
    }

    pub fn srgb_to_linrgb(&self) -> Result<Image> {
        if self.space != PixelSpace::Srgb {
            return Err(Error::WrongSpace {
                expected: PixelSpace::Srgb,
                actual: self.space,
            });
        }
        let mut out = self.map(|v| srgb_decode(v as f64) as f32);
        out.space = PixelSpace::LinearRgb;
        Ok(out)
    }
}

/// Standard sRGB encoding. Negative inputs map through the linear segment
/// so the curve stays odd-symmetric and finite.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// A burst of equally sized frames with one designated reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    frames: Vec<Image>,
    reference_index: usize,
}

impl Burst {
    pub fn new(frames: Vec<Image>, reference_index: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("burst needs at least one frame"));
        }
        if reference_index >= frames.len() {
            return Err(Error::invalid(format!(
                "reference index {reference_index} out of range for {} frames",
                frames.len()
            )));
        }
        let first = (frames[0].dims(), frames[0].space());
        for f in &frames[1..] {
            if (f.dims(), f.space()) != first {
                return Err(Error::dims(first, (f.dims(), f.space())));
            }
        }
        Ok(Self {
            frames,
            reference_index,
        })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &Image {
        &self.frames[self.reference_index]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }

    pub fn space(&self) -> PixelSpace {
        self.frames[0].space()
    }

    /// Sub-burst made of the listed frames, in the listed order. The
    /// reference must be among them.
    pub fn select(&self, indices: &[usize]) -> Result<Burst> {
        let reference = indices
            .iter()
            .position(|&i| i == self.reference_index)
            .ok_or_else(|| Error::invalid("selection drops the reference frame"))?;
        let frames = indices
            .iter()
            .map(|&i| {
                self.frames
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("frame index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Burst::new(frames, reference)
    }

    pub fn into_frames(self) -> (Vec<Image>, usize) {
        (self.frames, self.reference_index)
    }
}
