mod common;

use brt_core::ops::{build_warp, AffineTransform, DegradationOp, Interpolation};
use brt_core::proxnet::{init_params, NetConfig, ProxNetParams};
use brt_core::train::scene::random_scene;
use brt_core::train::*;
use brt_core::{Burst, Image, PixelSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_var(v: &[f32], mean: f64) -> f64 {
    v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn heteroskedastic_variance() {
    let img = Image::filled(1000, 1000, 1, 0.5, PixelSpace::LinearRgb);
    let out = add_noise(&img, &NoiseModel::Heteroskedastic { alpha: 0.01, beta: 0.02 }, &mut ChaCha8Rng::seed_from_u64(1));
    let var = sample_var(out.data(), 0.5);
    assert!((var / 0.0054 - 1.0).abs() <= 0.02, "{var}");
}

#[test]
fn gaussian_std() {
    let img = Image::zeros(1000, 1000, 1, PixelSpace::LinearRgb);
    let sigma = 25.0 / 255.0;
    let out = add_noise(&img, &NoiseModel::Gaussian { sigma }, &mut ChaCha8Rng::seed_from_u64(2));
    let std = sample_var(out.data(), 0.0).sqrt();
    assert!((std / sigma - 1.0).abs() <= 0.01, "{std}");
}

#[test]
fn sampled_transforms_respect_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = SyntheticBurstSpec { burst_size: 2, crop: 4, ..Default::default() };
    let side = spec.min_source_size();
    let gt = random_scene(side, side, &mut rng);
    let max_rot = 2f64.to_radians() + 1e-12;
    for _ in 0..10_000 {
        let syn = synthesize_burst(&gt, &spec, &NoiseModel::none(), &mut rng).unwrap();
        let t = syn.transforms[0];
        let (dx, dy) = t.translation();
        assert!(t.rotation().abs() <= max_rot);
        assert!(dx.abs() <= 10.0 && dy.abs() <= 10.0);
    }
}

#[test]
fn augmented_frames_agree_with_reported_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = SyntheticBurstSpec {
        burst_size: 4,
        crop: 48,
        augment: Augment { flips: true, color_jitter: true },
        ..Default::default()
    };
    let side = spec.min_source_size();
    for _ in 0..4 {
        let gt = random_scene(side, side, &mut rng);
        let syn = synthesize_burst(&gt, &spec, &NoiseModel::none(), &mut rng).unwrap();
        for (frame, t) in syn.burst.frames().iter().zip(&syn.transforms) {
            let s = build_warp(t, syn.gt.dims(), Interpolation::Bilinear).unwrap();
            let predicted = s.apply(&syn.gt).unwrap();
            for r in 0..s.rows() {
                if s.row(r).0.is_empty() {
                    continue;
                }
                for c in 0..3 {
                    let (a, b) = (frame.data()[r * 3 + c], predicted.data()[r * 3 + c]);
                    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn l1_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_scene(6, 6, &mut rng);
    let gt = random_scene(6, 6, &mut rng);
    let (_, g) = l1_loss(&x, &gt).unwrap();
    let loss = |v: &[f64]| v.iter().zip(gt.data()).map(|(a, b)| (a - *b as f64).abs()).sum::<f64>() / v.len() as f64;
    let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    for i in 0..xv.len() {
        if (xv[i] - gt.data()[i] as f64).abs() < 1e-4 {
            continue;
        }
        let (mut p, mut m) = (xv.clone(), xv.clone());
        p[i] += 1e-6;
        m[i] -= 1e-6;
        let fd = (loss(&p) - loss(&m)) / 2e-6;
        assert!((fd - g.data()[i] as f64).abs() <= 1e-3 * fd.abs());
    }
}

fn tiny_params(k: usize, seed: u64) -> ProxNetParams {
    init_params(NetConfig { depth: 1, filters: 4, ..NetConfig::default() }, k, 1.0, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn amsgrad_constant_gradient_limit() {
    let mut p = tiny_params(2, 0);
    let mut g = p.zeros_like();
    g.w[1] = 0.3;
    g.s[0] = -2.0;
    let mut st = AmsGradState::new(&p, AmsGradConfig::default());
    let lr = 1e-2;
    let mut last_vmax = st.v_max.clone();
    let mut step = 0.0;
    for _ in 0..2000 {
        // Re-centre so the f32 difference resolves the step exactly.
        p.w[1] = 0.0;
        optimizer_step(&mut p, &g, &mut st, lr).unwrap();
        step = -(p.w[1] as f64);
        assert!(st.v_max.iter().zip(&last_vmax).all(|(a, b)| a >= b));
        last_vmax = st.v_max.clone();
    }
    assert!(step > 0.0);
    assert!(step <= lr * (1.0 + 1e-8) + 1e-7, "{step}");
    assert!((step - lr).abs() <= 1e-4 * lr + 1e-7, "{step}");
}

#[test]
fn amsgrad_rejects_shape_mismatch() {
    let mut p = tiny_params(2, 0);
    let other = tiny_params(3, 0);
    let mut st = AmsGradState::new(&p, AmsGradConfig::default());
    assert!(optimizer_step(&mut p, &other, &mut st, 1e-3).is_err());
}

fn dataset(count: usize, crop: usize, b: usize, sigma: f64, seed: u64) -> Vec<TrainingSample> {
    Dataset::synthesize(&DatasetConfig {
        source: GroundTruthSource::Procedural,
        count,
        spec: SyntheticBurstSpec { burst_size: b, crop, ..Default::default() },
        noise: NoiseSpec::Fixed { model: NoiseModel::Gaussian { sigma } },
        warps: WarpSource::Oracle,
        seed,
    })
    .unwrap()
    .samples
}

#[test]
fn two_updates_per_sample_per_epoch() {
    let data = dataset(3, 16, 3, 0.05, 6);
    let cfg = TrainConfig { iterations: 10, truncation: 5, ..Default::default() };
    let mut t = Trainer::new(cfg, NetConfig { depth: 1, filters: 4, ..NetConfig::default() }).unwrap();
    let stats = t.train_epoch(&data).unwrap();
    assert_eq!(stats.updates, 6);
    assert_eq!(t.optimizer.step, 6);
}

#[test]
fn config_validation() {
    let bad = TrainConfig { iterations: 10, truncation: 4, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = TrainConfig { iterations: 4, truncation: 5, ..Default::default() };
    assert!(bad.validate().is_err());
    let cfg = TrainConfig::default();
    assert_eq!(cfg.learning_rate_at(99), cfg.learning_rate);
    assert!((cfg.learning_rate_at(100) - cfg.learning_rate * 0.1).abs() < 1e-15);
    assert!((cfg.learning_rate_at(250) - cfg.learning_rate * 0.01).abs() < 1e-15);
}

#[test]
fn training_is_deterministic() {
    let data = dataset(2, 16, 3, 0.05, 7);
    let cfg = TrainConfig { iterations: 4, truncation: 2, epochs: 2, pretrain_epochs: 1, ..Default::default() };
    let net = NetConfig { depth: 1, filters: 4, ..NetConfig::default() };
    let a = tbptt_train(&data, &cfg, net).unwrap();
    let b = tbptt_train(&data, &cfg, net).unwrap();
    assert_eq!(a.params.flatten(), b.params.flatten());
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn resume_continues_identically() {
    let data = dataset(2, 16, 3, 0.05, 8);
    let cfg = TrainConfig { iterations: 4, truncation: 2, ..Default::default() };
    let net = NetConfig { depth: 1, filters: 4, ..NetConfig::default() };
    let mut straight = Trainer::new(cfg.clone(), net).unwrap();
    straight.train_epoch(&data).unwrap();
    straight.train_epoch(&data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.brtc");
    let mut first = Trainer::new(cfg.clone(), net).unwrap();
    first.train_epoch(&data).unwrap();
    first.save(&path).unwrap();
    let mut resumed = Trainer::resume(cfg, &path).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.train_epoch(&data).unwrap();
    assert_eq!(resumed.params.flatten(), straight.params.flatten());
}

#[test]
fn single_sample_overfits() {
    let data = dataset(1, 16, 3, 0.05, 9);
    // One sample per epoch; keep the rate fixed across all 250 epochs.
    let cfg = TrainConfig { learning_rate: 2e-3, lr_decay_every: 1_000_000, ..Default::default() };
    let mut t = Trainer::new(cfg, NetConfig::tiny()).unwrap();
    let first = t.train_epoch(&data).unwrap().loss;
    let mut last = first;
    for _ in 1..250 {
        last = t.train_epoch(&data).unwrap().loss;
    }
    assert_eq!(t.optimizer.step, 500);
    assert!(last <= first / 10.0, "{first} -> {last}");
}

#[test]
fn single_chunk_gradient_matches_full_unroll() {
    let (h, w, b) = (8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gt = random_scene(h, w, &mut rng);
    let ts: Vec<(f64, f64, f64)> = (0..b)
        .map(|i| if i + 1 == b { (0.0, 0.0, 0.0) } else { (rng.random_range(-0.02..0.02), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)) })
        .collect();
    let transforms: Vec<AffineTransform> = ts.iter().map(|t| AffineTransform::about_image_center(t.0, t.1, t.2, h, w)).collect();
    let frames: Vec<Image> = transforms
        .iter()
        .map(|t| {
            let clean = build_warp(t, gt.dims(), Interpolation::Bilinear).unwrap().apply(&gt).unwrap();
            add_noise(&clean, &NoiseModel::Gaussian { sigma: 0.05 }, &mut rng)
        })
        .collect();
    let sigma = 0.05;
    let sample = TrainingSample::new(Burst::new(frames.clone(), b - 1).unwrap(), transforms, gt.clone(), DegradationOp::Identity, sigma).unwrap();
    let mut params = tiny_params(3, 11);
    params.w = vec![0.1, 0.4, 0.6];
    let (_, grads) = unrolled_gradient(&params, &sample, false).unwrap();

    let dense: Vec<_> = ts.iter().map(|t| common::dense_warp_matrix(h, w, *t)).collect();
    let ys: Vec<Vec<f64>> = frames.iter().map(|f| f.data().iter().map(|&v| v as f64).collect()).collect();
    let gtv: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let loss = |p: &ProxNetParams| {
        let x = common::unrolled_solver(p, &ys, b - 1, &dense, h, w, sigma, 1.0 / b as f64);
        x.iter().zip(&gtv).map(|(a, g)| (a - g).abs()).sum::<f64>() / x.len() as f64
    };

    let flat = params.flatten();
    let analytic = grads.flatten();
    let n = flat.len();
    // Every s and w entry plus a spread of network weights.
    let mut probe: Vec<usize> = (n - 6..n).collect();
    probe.extend((0..n - 6).step_by(23));
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let mut q = params.clone();
    for &i in &probe {
        let eps = 1e-5f32 * flat[i].abs().max(0.05);
        let (mut p, mut m) = (flat.clone(), flat.clone());
        p[i] += eps;
        m[i] -= eps;
        q.unflatten(&p).unwrap();
        let lp = loss(&q);
        q.unflatten(&m).unwrap();
        let lm = loss(&q);
        let fd = (lp - lm) / (p[i] as f64 - m[i] as f64);
        num += (fd - analytic[i] as f64).powi(2);
        den += fd * fd;
    }
    let rel = (num / den).sqrt();
    assert!(rel <= 1e-4, "relative gradient error {rel}");
}
