use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::TensorArchive;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

use super::AffineTransform;

/// Sub-pixel offsets this close to the lattice are treated as exact.
const LATTICE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Interpolation under a rigid transform stored as a sparse `N x N` matrix
/// over pixel positions (CSR). All channels share the spatial stencil.
///
/// Row `r` gathers from the source position obtained by applying the
/// transform to target pixel `r`. Rows whose stencil leaves the image are
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWarp {
    height: usize,
    width: usize,
    channels: usize,
    interp: Interpolation,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f32>,
    out_of_bounds: Vec<u32>,
}

pub fn build_warp(
    t: &AffineTransform,
    dims: (usize, usize, usize),
    interp: Interpolation,
) -> Result<SparseWarp> {
    let (h, w, c) = dims;
    if h == 0 || w == 0 || !(c == 1 || c == 3) {
        return Err(Error::invalid(format!("invalid warp dims {dims:?}")));
    }
    if h * w >= u32::MAX as usize {
        return Err(Error::invalid("image too large for 32-bit indices"));
    }
    let n = h * w;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * 4);
    let mut vals = Vec::with_capacity(n * 4);
    let mut out_of_bounds = Vec::new();
    row_ptr.push(0u32);

    let inside = |v: i64, len: usize| v >= 0 && v < len as i64;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.apply(x as f64, y as f64);
            let ok = match interp {
                Interpolation::Nearest => {
                    let (ix, iy) = (sx.round() as i64, sy.round() as i64);
                    if inside(ix, w) && inside(iy, h) {
                        cols.push((iy as usize * w + ix as usize) as u32);
                        vals.push(1.0);
                        true
                    } else {
                        false
                    }
                }
                Interpolation::Bilinear => {
                    let (x0, fx) = split_coord(sx);
                    let (y0, fy) = split_coord(sy);
                    let x_last = if fx > 0.0 { x0 + 1 } else { x0 };
                    let y_last = if fy > 0.0 { y0 + 1 } else { y0 };
                    if inside(x0, w) && inside(x_last, w) && inside(y0, h) && inside(y_last, h) {
                        let base = y0 as usize * w + x0 as usize;
                        let taps = [
                            (0, (1.0 - fx) * (1.0 - fy)),
                            (1, fx * (1.0 - fy)),
                            (w, (1.0 - fx) * fy),
                            (w + 1, fx * fy),
                        ];
                        for (off, wgt) in taps {
                            if wgt > 0.0 {
                                cols.push((base + off) as u32);
                                vals.push(wgt as f32);
                            }
                        }
                        true
                    } else {
                        false
                    }
                }
            };
            if !ok {
                out_of_bounds.push((y * w + x) as u32);
            }
            row_ptr.push(cols.len() as u32);
        }
    }
    Ok(SparseWarp {
        height: h,
        width: w,
        channels: c,
        interp,
        row_ptr,
        cols,
        vals,
        out_of_bounds,
    })
}

#[inline]
fn split_coord(v: f64) -> (i64, f64) {
    let base = v.floor();
    let frac = v - base;
    if frac < LATTICE_SNAP {
        (base as i64, 0.0)
    } else if frac > 1.0 - LATTICE_SNAP {
        (base as i64 + 1, 0.0)
    } else {
        (base as i64, frac)
    }
}

impl SparseWarp {
    pub fn identity(dims: (usize, usize, usize)) -> Result<Self> {
        build_warp(&AffineTransform::identity(), dims, Interpolation::Bilinear)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn rows(&self) -> usize {
        self.height * self.width
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interp
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn out_of_bounds_rows(&self) -> &[u32] {
        &self.out_of_bounds
    }

    pub fn is_identity(&self) -> bool {
        (0..self.rows()).all(|r| {
            let (c, v) = self.row(r);
            c.len() == 1 && c[0] as usize == r && v[0] == 1.0
        })
    }

    /// Feeds the full sparse structure into `state`.
    pub(crate) fn hash_into<H: std::hash::Hasher>(&self, state: &mut H) {
        use std::hash::Hash;
        (self.height, self.width, self.channels).hash(state);
        self.row_ptr.hash(state);
        self.cols.hash(state);
        self.vals.iter().for_each(|v| v.to_bits().hash(state));
    }

    /// `dst = S src` on interleaved samples.
    pub fn gather<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let c = self.channels;
        debug_assert_eq!(src.len(), self.rows() * c);
        debug_assert_eq!(dst.len(), self.rows() * c);
        for (r, out) in dst.chunks_exact_mut(c).enumerate() {
            let (a, b) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
            out.iter_mut().for_each(|v| *v = T::zero());
            for k in a..b {
                let wgt = T::from_f32(self.vals[k]);
                let s = self.cols[k] as usize * c;
                for ch in 0..c {
                    out[ch] += wgt * src[s + ch];
                }
            }
        }
    }

    /// `dst += S^T src` (splatting).
    pub fn scatter_add<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let c = self.channels;
        debug_assert_eq!(src.len(), self.rows() * c);
        debug_assert_eq!(dst.len(), self.rows() * c);
        for (r, v) in src.chunks_exact(c).enumerate() {
            let (a, b) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
            for k in a..b {
                let wgt = T::from_f32(self.vals[k]);
                let d = self.cols[k] as usize * c;
                for ch in 0..c {
                    dst[d + ch] += wgt * v[ch];
                }
            }
        }
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.dims() != self.dims() {
            return Err(Error::dims(self.dims(), img.dims()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        let mut out = vec![0.0f32; x.len()];
        self.gather(x.data(), &mut out);
        Ok(Image::from_raw(self.height, self.width, self.channels, out, x.space()))
    }

    pub fn apply_adjoint(&self, v: &Image) -> Result<Image> {
        self.check(v)?;
        let mut out = vec![0.0f32; v.len()];
        self.scatter_add(v.data(), &mut out);
        Ok(Image::from_raw(self.height, self.width, self.channels, out, v.space()))
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        let interp = match self.interp {
            Interpolation::Bilinear => 0,
            Interpolation::Nearest => 1,
        };
        a.push_u32(
            "header",
            &[self.height as u32, self.width as u32, self.channels as u32, interp],
        )?;
        a.push_u32("row_ptr", &self.row_ptr)?;
        a.push_u32("cols", &self.cols)?;
        a.push_f32("vals", &self.vals)?;
        a.push_u32("out_of_bounds", &self.out_of_bounds)?;
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let header = a.u32("header")?;
        let [h, w, c, interp] = <[u32; 4]>::try_from(header)
            .map_err(|_| crate::error::Error::Format("warp header must hold 4 entries".into()))?;
        let interp = match interp {
            0 => Interpolation::Bilinear,
            1 => Interpolation::Nearest,
            other => return Err(Error::Format(format!("unknown interpolation tag {other}"))),
        };
        let warp = SparseWarp {
            height: h as usize,
            width: w as usize,
            channels: c as usize,
            interp,
            row_ptr: a.u32("row_ptr")?.to_vec(),
            cols: a.u32("cols")?.to_vec(),
            vals: a.f32("vals")?.to_vec(),
            out_of_bounds: a.u32("out_of_bounds")?.to_vec(),
        };
        let n = warp.rows();
        let consistent = warp.row_ptr.len() == n + 1
            && warp.row_ptr.windows(2).all(|p| p[0] <= p[1])
            && *warp.row_ptr.last().unwrap_or(&1) as usize == warp.cols.len()
            && warp.cols.len() == warp.vals.len()
            && warp.cols.iter().all(|&col| (col as usize) < n);
        if !consistent {
            return Err(Error::Format("inconsistent sparse warp arrays".into()));
        }
        Ok(warp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

pub fn apply_warp(s: &SparseWarp, x: &Image) -> Result<Image> {
    s.apply(x)
}

pub fn apply_warp_adjoint(s: &SparseWarp, v: &Image) -> Result<Image> {
    s.apply_adjoint(v)
}
