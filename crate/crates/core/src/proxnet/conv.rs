//! 2-D convolution with half-sample symmetric padding, lowered to GEMM via
//! im2col. Feature maps are planar `C x H x W`.

use rand::Rng;

/// Maps an out-of-range index back into `0..n` by mirroring about the
/// border (`-1 -> 0`, `n -> n - 1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
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

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out x in x k x k`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-style uniform init scaled by fan-in for a PReLU slope `a`;
    /// biases start at zero.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, a: f64, rng: &mut R) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / ((1.0 + a * a) * fan_in)).sqrt() as f32;
        conv.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        conv
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// `out = conv(input) + bias` for a `in x h x w` input.
    pub fn forward(&self, input: &[f32], h: usize, w: usize, out: &mut [f32], cols: &mut Vec<f32>) {
        let hw = h * w;
        debug_assert_eq!(input.len(), self.in_channels * hw);
        debug_assert_eq!(out.len(), self.out_channels * hw);
        im2col(input, self.in_channels, h, w, self.kernel, cols);
        for (row, b) in out.chunks_exact_mut(hw).zip(&self.bias) {
            row.fill(*b);
        }
        let r = self.patch_len();
        // out (O x HW) += W (O x R) * cols (R x HW)
        unsafe {
            matrixmultiply::sgemm(
                self.out_channels,
                r,
                hw,
                1.0,
                self.weight.as_ptr(),
                r as isize,
                1,
                cols.as_ptr(),
                hw as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
    }

    /// Accumulates weight/bias gradients into `grad` and, when requested,
    /// the input gradient into `grad_input`.
    pub fn backward(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        grad_out: &[f32],
        grad: &mut Conv2d,
        grad_input: Option<&mut [f32]>,
        cols: &mut Vec<f32>,
    ) {
        let hw = h * w;
        let r = self.patch_len();
        debug_assert_eq!(grad_out.len(), self.out_channels * hw);
        for (gb, row) in grad.bias.iter_mut().zip(grad_out.chunks_exact(hw)) {
            *gb += row.iter().sum::<f32>();
        }
        im2col(input, self.in_channels, h, w, self.kernel, cols);
        // dW (O x R) += dOut (O x HW) * cols^T (HW x R)
        unsafe {
            matrixmultiply::sgemm(
                self.out_channels,
                hw,
                r,
                1.0,
                grad_out.as_ptr(),
                hw as isize,
                1,
                cols.as_ptr(),
                1,
                hw as isize,
                1.0,
                grad.weight.as_mut_ptr(),
                r as isize,
                1,
            );
        }
        if let Some(grad_input) = grad_input {
            // dCols (R x HW) = W^T (R x O) * dOut (O x HW)
            unsafe {
                matrixmultiply::sgemm(
                    r,
                    self.out_channels,
                    hw,
                    1.0,
                    self.weight.as_ptr(),
                    1,
                    r as isize,
                    grad_out.as_ptr(),
                    hw as isize,
                    1,
                    0.0,
                    cols.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            col2im_add(cols, self.in_channels, h, w, self.kernel, grad_input);
        }
    }
}

/// Column range `[lo, hi)` whose shifted index `x + off` stays in `0..w`.
#[inline]
fn interior(off: isize, w: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (w as isize - off).clamp(0, w as isize) as usize;
    (lo.min(w), hi.max(lo.min(w)))
}

pub(crate) fn im2col(input: &[f32], c: usize, h: usize, w: usize, k: usize, cols: &mut Vec<f32>) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    cols.resize(c * k * k * hw, 0.0);
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let ox = kx as isize - pad;
                let (lo, hi) = interior(ox, w);
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - pad, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let d = &mut dst[y * w..(y + 1) * w];
                    if hi > lo {
                        d[lo..hi].copy_from_slice(&src[(lo as isize + ox) as usize..(hi as isize + ox) as usize]);
                    }
                    for x in (0..lo).chain(hi..w) {
                        d[x] = src[reflect(x as isize + ox, w)];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the input grid.
pub(crate) fn col2im_add(cols: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let ox = kx as isize - pad;
                let (lo, hi) = interior(ox, w);
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - pad, h);
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    let s = &src[y * w..(y + 1) * w];
                    if hi > lo {
                        let shifted = &mut dst[(lo as isize + ox) as usize..(hi as isize + ox) as usize];
                        for (d, v) in shifted.iter_mut().zip(&s[lo..hi]) {
                            *d += v;
                        }
                    }
                    for x in (0..lo).chain(hi..w) {
                        dst[reflect(x as isize + ox, w)] += s[x];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv2d, input: &[f32], h: usize, w: usize) -> Vec<f64> {
        let k = conv.kernel;
        let p = (k / 2) as isize;
        let mut out = vec![0.0f64; conv.out_channels * h * w];
        for o in 0..conv.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = conv.bias[o] as f64;
                    for i in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = reflect(y as isize + ky as isize - p, h);
                                let sx = reflect(x as isize + kx as isize - p, w);
                                acc += conv.weight[((o * conv.in_channels + i) * k + ky) * k + kx] as f64
                                    * input[(i * h + sy) * w + sx] as f64;
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(3, 5), 3);
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (cin, cout, k, h, w) in [(3, 4, 5, 7, 9), (4, 4, 3, 5, 6), (4, 3, 5, 3, 4)] {
            let mut conv = Conv2d::init(cin, cout, k, 0.25, &mut rng);
            conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let input: Vec<f32> = (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; cout * h * w];
            conv.forward(&input, h, w, &mut out, &mut Vec::new());
            for (a, b) in out.iter().zip(naive(&conv, &input, h, w)) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, h, w, k) = (2, 6, 7, 5);
        let x: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, k, &mut cols);
        let v: Vec<f32> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut back = vec![0.0; x.len()];
        col2im_add(&v, c, h, w, k, &mut back);
        let lhs: f64 = cols.iter().zip(&v).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }
}
