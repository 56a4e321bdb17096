use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};

use super::{Image, PixelSpace};

pub const NATIVE_MAGIC: &[u8; 4] = b"BRT1";

/// Loads a PNG (8/16-bit gray or RGB) or a native `BRT1` tensor and attaches
/// `space`. Integer samples are scaled to `[0, 1]` by their full-scale value.
pub fn load_image(path: impl AsRef<Path>, space: PixelSpace) -> Result<Image> {
    let path = path.as_ref();
    let mut magic = [0u8; 4];
    let is_native = {
        let mut f = File::open(path)?;
        f.read(&mut magic)? == 4 && &magic == NATIVE_MAGIC
    };
    if is_native {
        return load_native(path)?.with_space(space);
    }

    let unsupported = |reason: &str| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let decoded = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(buf) => (1, buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb16(buf) => (3, buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgba16(_) => return Err(unsupported("alpha channels are not supported")),
        _ => return Err(unsupported("only 8- and 16-bit integer samples are supported")),
    };
    if space == PixelSpace::MosaickedLinear && channels != 3 {
        return Err(unsupported("mosaicked images must be stored with 3 channels"));
    }
    Image::new(h, w, channels, data, space)
}

/// Writes an 8-bit PNG after clamping to `[0, 1]`.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let quantized: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, quantized)
            .expect("buffer size matches")
            .save(path)?,
        _ => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, quantized)
            .expect("buffer size matches")
            .save(path)?,
    }
    Ok(())
}

/// Writes a 16-bit PNG after clamping to `[0, 1]`.
pub fn save_png16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let quantized: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, quantized)
            .expect("buffer size matches")
            .save(path)?,
        _ => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, quantized)
            .expect("buffer size matches")
            .save(path)?,
    }
    Ok(())
}

/// Native layout: `BRT1`, u32 LE height, width, channels, u8 space tag, then
/// f32 LE samples in raster order.
pub fn save_native(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(NATIVE_MAGIC)?;
    for v in [img.height(), img.width(), img.channels()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&[img.space().tag()])?;
    for v in img.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_native(path: impl AsRef<Path>) -> Result<Image> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != NATIVE_MAGIC {
        return Err(Error::Format("missing BRT1 magic".into()));
    }
    let mut word = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut word)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    let space =
        PixelSpace::from_tag(tag[0]).ok_or_else(|| Error::Format(format!("unknown space tag {}", tag[0])))?;
    let [h, w, c] = dims;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    let mut bytes = Vec::with_capacity(count * 4);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Image::new(h, w, c, data, space)
}
