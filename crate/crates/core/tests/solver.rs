use std::sync::Arc;
use std::time::Instant;

use brt_core::align::PyramidConfig;
use brt_core::image::psnr;
use brt_core::ops::{build_warp, AffineTransform, BayerPattern, DegradationOp, ForwardModel, Interpolation, SparseWarp};
use brt_core::proxnet::{init_params, NetConfig};
use brt_core::solver::{initialize_estimate, run, run_with_alignment, Prox, SolverConfig};
use brt_core::train::scene::random_scene;
use brt_core::train::{synthesize_burst, NoiseModel, SyntheticBurstSpec, Task};
use brt_core::{Burst, Image, PixelSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn warps_for(transforms: &[AffineTransform], dims: (usize, usize, usize)) -> Vec<SparseWarp> {
    transforms.iter().map(|t| build_warp(t, dims, Interpolation::Bilinear).unwrap()).collect()
}

#[test]
fn identity_init_copies_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = random_scene(12, 12, &mut rng);
    let burst = Burst::new(vec![Image::zeros(12, 12, 3, PixelSpace::LinearRgb), y.clone()], 1).unwrap();
    assert_eq!(initialize_estimate(&burst, DegradationOp::Identity).unwrap().data(), y.data());
}

#[test]
fn cfa_init_on_constant_and_linear_images() {
    let op = DegradationOp::Cfa(BayerPattern::RGGB);
    let constant = Image::filled(8, 10, 3, 0.25, PixelSpace::LinearRgb);
    let x = initialize_estimate(&Burst::new(vec![op.apply(&constant).unwrap()], 0).unwrap(), op).unwrap();
    assert!(x.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));

    // Bilinear interpolation reproduces affine functions away from the border.
    let (h, w) = (10, 12);
    let f = |y: usize, x: usize, c: usize| 0.1 + 0.02 * y as f32 + 0.03 * x as f32 + 0.05 * c as f32;
    let data = (0..h * w * 3).map(|i| f(i / 3 / w, i / 3 % w, i % 3)).collect();
    let lin = Image::new(h, w, 3, data, PixelSpace::LinearRgb).unwrap();
    let x = initialize_estimate(&Burst::new(vec![op.apply(&lin).unwrap()], 0).unwrap(), op).unwrap();
    for y in 1..h - 1 {
        for xx in 1..w - 1 {
            for c in 0..3 {
                assert!((x.get(y, xx, c) - f(y, xx, c)).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn aligned_noise_free_burst_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt = random_scene(32, 32, &mut rng);
    for op in [DegradationOp::Identity, DegradationOp::Cfa(BayerPattern::RGGB)] {
        let frames = vec![op.apply(&gt).unwrap(); 4];
        let burst = Burst::new(frames, 3).unwrap();
        let warps = vec![SparseWarp::identity(gt.dims()).unwrap(); 4];
        let (_, trace) = run(&burst, &warps, op, &SolverConfig::classical(10, 1.0, Prox::Identity)).unwrap();
        let f = trace.fidelity();
        assert!(f.windows(2).skip(1).all(|p| p[1] <= p[0]), "{f:?}");
        assert!(*f.last().unwrap() <= 1e-8);
    }
}

#[test]
fn pixel_shifted_mosaic_burst_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt = random_scene(32, 32, &mut rng);
    let op = DegradationOp::Cfa(BayerPattern::RGGB);
    let ts: Vec<AffineTransform> = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.0, 0.0)].iter().map(|&(dx, dy)| AffineTransform::rigid(0.0, dx, dy)).collect();
    let warps = warps_for(&ts, gt.dims());
    let frames = warps.iter().map(|w| op.apply(&w.apply(&gt).unwrap()).unwrap()).collect();
    let burst = Burst::new(frames, 3).unwrap();
    let (_, trace) = run(&burst, &warps, op, &SolverConfig::classical(60, 1.0, Prox::Identity)).unwrap();
    let f = trace.fidelity();
    assert!(f[0] > 1e-2);
    assert!(f.windows(2).skip(1).all(|p| p[1] <= p[0]), "{f:?}");
    assert!(f[59] <= 1e-8, "{}", f[59]);
}

#[test]
fn misaligned_mosaic_fidelity_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = random_scene(32, 32, &mut rng);
    let op = DegradationOp::Cfa(BayerPattern::RGGB);
    let mut ts: Vec<AffineTransform> = (0..3)
        .map(|_| AffineTransform::about_image_center(rng.random_range(-0.03..0.03), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 32, 32))
        .collect();
    ts.push(AffineTransform::identity());
    let warps = warps_for(&ts, gt.dims());
    let frames = warps.iter().map(|w| op.apply(&w.apply(&gt).unwrap()).unwrap()).collect();
    let burst = Burst::new(frames, 3).unwrap();
    let (_, trace) = run(&burst, &warps, op, &SolverConfig::classical(30, 1.0, Prox::Identity)).unwrap();
    let f = trace.fidelity();
    assert!(f.windows(2).skip(1).all(|p| p[1] <= p[0]), "{f:?}");
    assert!(f[29] < 0.2 * f[0]);
}

fn noisy_burst(seed: u64, b: usize, crop: usize, sigma: f64) -> (brt_core::train::SyntheticBurst, Vec<SparseWarp>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SyntheticBurstSpec { burst_size: b, crop, ..Default::default() };
    let side = spec.min_source_size();
    let gt = random_scene(side, side, &mut rng);
    let syn = synthesize_burst(&gt, &spec, &NoiseModel::Gaussian { sigma }, &mut rng).unwrap();
    let warps = warps_for(&syn.transforms, syn.burst.dims());
    (syn, warps)
}

#[test]
fn frame_permutation_is_bit_identical() {
    let (syn, warps) = noisy_burst(4, 5, 32, 0.05);
    let params = init_params(NetConfig { depth: 1, filters: 4, ..NetConfig::default() }, 4, 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg = SolverConfig::from_network(Arc::new(params), 0.05);
    let (a, _) = run(&syn.burst, &warps, DegradationOp::Identity, &cfg).unwrap();
    let (frames, r) = syn.burst.clone().into_frames();
    for perm in [[2, 0, 3, 1], [3, 2, 1, 0], [1, 3, 0, 2]] {
        let mut f: Vec<Image> = perm.iter().map(|&i| frames[i].clone()).collect();
        let mut w: Vec<SparseWarp> = perm.iter().map(|&i| warps[i].clone()).collect();
        f.push(frames[r].clone());
        w.push(warps[r].clone());
        let (b, _) = run(&Burst::new(f, 4).unwrap(), &w, DegradationOp::Identity, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn alignment_of_identical_frames_matches_identity_warps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random_scene(64, 64, &mut rng);
    let burst = Burst::new(vec![img.clone(); 3], 2).unwrap();
    let cfg = SolverConfig::classical(5, 0.05, Prox::SoftThreshold(0.5));
    let (a, results, trace) = run_with_alignment(&burst, DegradationOp::Identity, &cfg, &PyramidConfig::default()).unwrap();
    assert!(results.iter().all(|r| r.converged));
    assert!(trace.warnings.is_empty());
    let (b, _) = run(&burst, &vec![SparseWarp::identity(img.dims()).unwrap(); 3], DegradationOp::Identity, &cfg).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-5);
    }
}

#[test]
fn failed_frames_are_dropped_with_warning() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = random_scene(64, 64, &mut rng);
    let flat = Image::filled(64, 64, 3, 0.5, PixelSpace::LinearRgb);
    let burst = Burst::new(vec![flat, img.clone()], 1).unwrap();
    let cfg = SolverConfig::classical(2, 0.05, Prox::Identity);
    let (x, results, trace) = run_with_alignment(&burst, DegradationOp::Identity, &cfg, &PyramidConfig::default()).unwrap();
    assert!(!results[0].converged);
    assert_eq!(trace.warnings.len(), 2);
    assert_eq!(x.data(), img.clamp01().data());
}

#[test]
fn oracle_warps_beat_estimated_warps() {
    let cfg = SolverConfig::classical(10, 0.04, Prox::SoftThreshold(0.2));
    let (mut oracle, mut estimated) = (0.0, 0.0);
    for seed in 0..3 {
        let (syn, warps) = noisy_burst(10 + seed, 4, 64, 0.04);
        let (a, _) = run(&syn.burst, &warps, DegradationOp::Identity, &cfg).unwrap();
        let (b, _, _) = run_with_alignment(&syn.burst, DegradationOp::Identity, &cfg, &PyramidConfig::default()).unwrap();
        oracle += psnr(&a, &syn.gt, 1.0).unwrap();
        estimated += psnr(&b, &syn.gt, 1.0).unwrap();
    }
    assert!(oracle >= estimated, "{oracle} vs {estimated}");
}

#[test]
fn larger_bursts_need_no_reconfiguration() {
    let params = Arc::new(init_params(NetConfig { depth: 1, filters: 4, ..NetConfig::default() }, 3, 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
    let cfg = SolverConfig::from_network(params, 0.05);
    for b in [2, 8, 16] {
        let (syn, warps) = noisy_burst(20, b, 32, 0.05);
        let (x, trace) = run(&syn.burst, &warps, DegradationOp::Identity, &cfg).unwrap();
        assert_eq!(x.dims(), (32, 32, 3));
        assert_eq!(trace.len(), 3);
    }
}

#[test]
fn mosaicked_burst_runs_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = SyntheticBurstSpec { burst_size: 4, crop: 32, task: Task::Demosaick { pattern: BayerPattern::RGGB }, ..Default::default() };
    let side = spec.min_source_size();
    let gt = random_scene(side, side, &mut rng);
    let syn = synthesize_burst(&gt, &spec, &NoiseModel::none(), &mut rng).unwrap();
    let warps = warps_for(&syn.transforms, syn.burst.dims());
    let op = spec.task.degradation();
    let cfg = SolverConfig::classical(10, 1.0, Prox::Identity);
    let (x, _) = run(&syn.burst, &warps, op, &cfg).unwrap();
    let x0 = initialize_estimate(&syn.burst, op).unwrap().clamp01();
    assert!(psnr(&x, &syn.gt, 1.0).unwrap() > psnr(&x0, &syn.gt, 1.0).unwrap());
}

#[test]
fn gradient_stage_scales_linearly_in_burst_size() {
    let (_, warps) = noisy_burst(30, 16, 64, 0.05);
    let x = vec![0.5f32; 64 * 64 * 3];
    let obs: Vec<Vec<f32>> = vec![vec![0.1; 64 * 64 * 3]; 16];
    let time = |b: usize| {
        let model = ForwardModel::new(&warps[..b], DegradationOp::Identity).unwrap();
        let refs: Vec<&[f32]> = obs[..b].iter().map(|v| v.as_slice()).collect();
        let t = Instant::now();
        for _ in 0..20 {
            std::hint::black_box(model.residual_sum(&x, &refs));
        }
        t.elapsed().as_secs_f64()
    };
    time(4);
    let ratio = time(16) / time(4);
    assert!((2.0..=8.0).contains(&ratio), "16/4 frame time ratio {ratio}");
}
