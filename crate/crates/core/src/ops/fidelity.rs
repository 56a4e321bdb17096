use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{Burst, Image, PixelSpace};
use crate::real::Real;

use super::{DegradationOp, SparseWarp};

/// The stacked forward operator `x -> (H S_1 x, ..., H S_B x)` over one set
/// of warps. Frame terms are always reduced in ascending frame order.
#[derive(Debug, Clone, Copy)]
pub struct ForwardModel<'a> {
    warps: &'a [SparseWarp],
    op: DegradationOp,
    dims: (usize, usize, usize),
}

impl<'a> ForwardModel<'a> {
    pub fn new(warps: &'a [SparseWarp], op: DegradationOp) -> Result<Self> {
        let first = warps
            .first()
            .ok_or_else(|| Error::invalid("forward model needs at least one warp"))?;
        let dims = first.dims();
        if let Some(bad) = warps.iter().find(|w| w.dims() != dims) {
            return Err(Error::dims(dims, bad.dims()));
        }
        op.check_channels(dims.2)?;
        Ok(Self { warps, op, dims })
    }

    pub fn frames(&self) -> usize {
        self.warps.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn op(&self) -> DegradationOp {
        self.op
    }

    pub fn warps(&self) -> &'a [SparseWarp] {
        self.warps
    }

    pub fn sample_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    /// `out = H S_i x`.
    pub fn project<T: Real>(&self, i: usize, x: &[T], out: &mut [T]) {
        self.warps[i].gather(x, out);
        self.op.apply_in_place(self.dims.1, out);
    }

    /// `out += S_i^T H^T r`; `r` is overwritten with `H^T r`.
    pub fn backproject_add<T: Real>(&self, i: usize, r: &mut [T], out: &mut [T]) {
        self.op.apply_in_place(self.dims.1, r);
        self.warps[i].scatter_add(r, out);
    }

    /// `z = sum_i S_i^T H^T (H S_i x - y_i)`.
    pub fn residual_sum<T: Real>(&self, x: &[T], observations: &[&[T]]) -> Vec<T> {
        debug_assert_eq!(observations.len(), self.frames());
        let n = self.sample_count();
        let mut z = vec![T::zero(); n];
        let mut buf = vec![T::zero(); n];
        for (i, y) in observations.iter().enumerate() {
            self.project(i, x, &mut buf);
            buf.iter_mut().zip(y.iter()).for_each(|(b, &yv)| *b -= yv);
            self.backproject_add(i, &mut buf, &mut z);
        }
        z
    }

    /// `sum_i S_i^T H^T H S_i x` (no 1/B normalisation).
    pub fn normal_apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        let n = self.sample_count();
        let mut z = vec![T::zero(); n];
        let mut buf = vec![T::zero(); n];
        for i in 0..self.frames() {
            self.project(i, x, &mut buf);
            self.backproject_add(i, &mut buf, &mut z);
        }
        z
    }

    /// `1 / (2 sigma^2 B) sum_i ||y_i - H S_i x||^2`, accumulated in `f64`.
    pub fn value<T: Real>(&self, x: &[T], observations: &[&[T]], sigma: f64) -> f64 {
        let n = self.sample_count();
        let mut buf = vec![T::zero(); n];
        let mut total = 0.0f64;
        for (i, y) in observations.iter().enumerate() {
            self.project(i, x, &mut buf);
            total += buf
                .iter()
                .zip(y.iter())
                .map(|(&p, &yv)| {
                    let d = yv.to_f64() - p.to_f64();
                    d * d
                })
                .sum::<f64>();
        }
        total / (2.0 * sigma * sigma * self.frames() as f64)
    }

    /// `1 / (sigma^2 B) sum_i S_i^T H^T (H S_i x - y_i)`.
    pub fn gradient<T: Real>(&self, x: &[T], observations: &[&[T]], sigma: f64) -> Vec<T> {
        let scale = T::from_f64(1.0 / (sigma * sigma * self.frames() as f64));
        let mut z = self.residual_sum(x, observations);
        z.iter_mut().for_each(|v| *v *= scale);
        z
    }
}

fn check_problem<'a>(
    x: &Image,
    burst: &'a Burst,
    warps: &'a [SparseWarp],
    op: DegradationOp,
    sigma: f64,
) -> Result<(ForwardModel<'a>, Vec<&'a [f32]>)> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {sigma}")));
    }
    if warps.len() != burst.len() {
        return Err(Error::dims(burst.len(), warps.len()));
    }
    let model = ForwardModel::new(warps, op)?;
    if x.dims() != model.dims() {
        return Err(Error::dims(model.dims(), x.dims()));
    }
    if burst.dims() != model.dims() {
        return Err(Error::dims(model.dims(), burst.dims()));
    }
    let obs = burst.frames().iter().map(|f| f.data()).collect();
    Ok((model, obs))
}

pub fn data_fidelity_value(
    x: &Image,
    burst: &Burst,
    warps: &[SparseWarp],
    op: DegradationOp,
    sigma: f64,
) -> Result<f64> {
    let (model, obs) = check_problem(x, burst, warps, op, sigma)?;
    Ok(model.value(x.data(), &obs, sigma))
}

pub fn data_fidelity_gradient(
    x: &Image,
    burst: &Burst,
    warps: &[SparseWarp],
    op: DegradationOp,
    sigma: f64,
) -> Result<Image> {
    let (model, obs) = check_problem(x, burst, warps, op, sigma)?;
    let g = model.gradient(x.data(), &obs, sigma);
    let (h, w, c) = model.dims();
    Ok(Image::from_raw(h, w, c, g, PixelSpace::LinearRgb))
}

/// Largest eigenvalue of `(1/B) sum_i S_i^T H^T H S_i` by power iteration in
/// `f64`. The data-fidelity gradient is then `lambda / sigma^2`-Lipschitz.
pub fn estimate_operator_norm<R: Rng + ?Sized>(
    warps: &[SparseWarp],
    op: DegradationOp,
    iterations: usize,
    rng: &mut R,
) -> Result<f64> {
    if iterations < 20 {
        return Err(Error::invalid(format!("power iteration needs at least 20 steps, got {iterations}")));
    }
    let model = ForwardModel::new(warps, op)?;
    let inv_b = 1.0 / model.frames() as f64;
    let mut v: Vec<f64> = (0..model.sample_count()).map(|_| rng.sample(StandardNormal)).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let mut av = model.normal_apply(&v);
        av.iter_mut().for_each(|a| *a *= inv_b);
        lambda = v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
        v = av;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{build_warp, AffineTransform, BayerPattern, Interpolation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
        Image::new(h, w, 3, data, PixelSpace::LinearRgb).unwrap()
    }

    #[test]
    fn single_frame_identity_gradient_is_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 6, 6);
        let y = random_image(&mut rng, 6, 6);
        let burst = Burst::new(vec![y.clone()], 0).unwrap();
        let warps = vec![SparseWarp::identity((6, 6, 3)).unwrap()];
        let g = data_fidelity_gradient(&x, &burst, &warps, DegradationOp::Identity, 1.0).unwrap();
        for ((gv, xv), yv) in g.data().iter().zip(x.data()).zip(y.data()) {
            assert!((gv - (xv - yv)).abs() < 1e-7);
        }
    }

    #[test]
    fn value_arithmetic() {
        let x = Image::zeros(1, 2, 1, PixelSpace::LinearRgb);
        let y = Image::new(1, 2, 1, vec![1.0, -1.0], PixelSpace::LinearRgb).unwrap();
        let burst = Burst::new(vec![y], 0).unwrap();
        let warps = vec![SparseWarp::identity((1, 2, 1)).unwrap()];
        let v = data_fidelity_value(&x, &burst, &warps, DegradationOp::Identity, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_solution_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(&mut rng, 12, 12);
        let op = DegradationOp::Cfa(BayerPattern::RGGB);
        let warps: Vec<SparseWarp> = [(0.0, 0.0, 0.0), (0.01, 1.5, -0.5), (-0.02, -2.0, 0.3)]
            .iter()
            .map(|&(r, dx, dy)| {
                let t = AffineTransform::about_image_center(r, dx, dy, 12, 12);
                build_warp(&t, (12, 12, 3), Interpolation::Bilinear).unwrap()
            })
            .collect();
        let frames = warps
            .iter()
            .map(|w| op.apply(&w.apply(&x).unwrap()).unwrap())
            .collect();
        let burst = Burst::new(frames, 0).unwrap();
        let g = data_fidelity_gradient(&x, &burst, &warps, op, 1.0).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-6));
        let v = data_fidelity_value(&x, &burst, &warps, op, 1.0).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let x = Image::zeros(4, 4, 3, PixelSpace::LinearRgb);
        let burst = Burst::new(vec![x.clone(), x.clone()], 0).unwrap();
        let one = vec![SparseWarp::identity((4, 4, 3)).unwrap()];
        assert!(data_fidelity_value(&x, &burst, &one, DegradationOp::Identity, 1.0).is_err());
        let two = vec![one[0].clone(), one[0].clone()];
        assert!(data_fidelity_gradient(&x, &burst, &two, DegradationOp::Identity, 0.0).is_err());
        assert!(data_fidelity_gradient(&x, &burst, &two, DegradationOp::Identity, -1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(estimate_operator_norm(&two, DegradationOp::Identity, 5, &mut rng).is_err());
    }

    #[test]
    fn operator_norm_of_identity_and_cfa() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let warps = vec![SparseWarp::identity((8, 8, 3)).unwrap(); 3];
        let l = estimate_operator_norm(&warps, DegradationOp::Identity, 20, &mut rng).unwrap();
        assert!((l - 1.0).abs() < 1e-4);
        let l = estimate_operator_norm(&warps, DegradationOp::Cfa(BayerPattern::RGGB), 20, &mut rng).unwrap();
        assert!((l - 1.0).abs() < 1e-4);
    }
}
